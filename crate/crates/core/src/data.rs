//! Canonical data model: raw readings, the hourly time grid, per-sensor
//! series with explicit missing values, and the windowing/differencing
//! primitives every downstream model works on.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest training window accepted anywhere in the pipeline, in hours.
pub const WINDOW_MIN_HOURS: usize = 200;
/// Longest training window accepted anywhere in the pipeline, in hours.
pub const WINDOW_MAX_HOURS: usize = 900;

/// A single device reading before aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReading {
    pub sensor_id: String,
    pub timestamp: NaiveDateTime,
    /// Volumetric water content, percent.
    pub vwc: f64,
}

/// Consecutive hourly slots starting at an hour boundary. Slot `i` covers
/// `[start + i h, start + (i + 1) h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeGrid {
    start: NaiveDateTime,
    n_slots: usize,
}

impl TimeGrid {
    pub fn new(start: NaiveDateTime, n_slots: usize) -> Result<Self> {
        if n_slots == 0 {
            return Err(Error::InvalidGrid("grid needs at least one slot".into()));
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::InvalidGrid(format!(
                "start {start} is not aligned to the hour"
            )));
        }
        Ok(Self { start, n_slots })
    }

    /// Smallest grid covering every timestamp in `times`.
    pub fn covering<'a, I>(times: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a NaiveDateTime>,
    {
        let mut iter = times.into_iter();
        let first = *iter.next().ok_or(Error::NoReadings)?;
        let (lo, hi) = iter.fold((first, first), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        let start = floor_hour(lo);
        let n_slots = ((hi - start).num_seconds() / 3600) as usize + 1;
        Self::new(start, n_slots)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// Exclusive end instant.
    pub fn end(&self) -> NaiveDateTime {
        self.slot_time(self.n_slots)
    }

    pub fn slot_time(&self, slot: usize) -> NaiveDateTime {
        self.start + Duration::hours(slot as i64)
    }

    /// Slot containing `t`, if `t` is inside the grid.
    pub fn slot_of(&self, t: NaiveDateTime) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let slot = ((t - self.start).num_seconds() / 3600) as usize;
        (slot < self.n_slots).then_some(slot)
    }

    /// Index of the slot starting exactly at `t`, allowing `t == end()`.
    pub fn boundary_of(&self, t: NaiveDateTime) -> Option<usize> {
        if t < self.start || floor_hour(t) != t {
            return None;
        }
        let slot = ((t - self.start).num_seconds() / 3600) as usize;
        (slot <= self.n_slots).then_some(slot)
    }

    pub fn sub_grid(&self, offset: usize, len: usize) -> Result<Self> {
        if offset + len > self.n_slots {
            return Err(Error::InvalidGrid(format!(
                "sub-grid [{offset}, {}) exceeds {} slots",
                offset + len,
                self.n_slots
            )));
        }
        Self::new(self.slot_time(offset), len)
    }

    pub fn hour_of_day(&self, slot: usize) -> u32 {
        self.slot_time(slot).hour()
    }
}

pub fn floor_hour(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_hms_opt(t.hour(), 0, 0).expect("valid hour")
}

/// One sensor's hourly series. `None` marks a missing slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    sensor_id: String,
    grid: TimeGrid,
    values: Vec<Option<f64>>,
}

impl SensorSeries {
    pub fn new(
        sensor_id: impl Into<String>,
        grid: TimeGrid,
        values: Vec<Option<f64>>,
    ) -> Result<Self> {
        let sensor_id = sensor_id.into();
        if values.len() != grid.n_slots() {
            return Err(Error::LengthMismatch(format!(
                "{sensor_id}: {} values for {} slots",
                values.len(),
                grid.n_slots()
            )));
        }
        if let Some(i) = values.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
            return Err(Error::Degenerate(format!(
                "{sensor_id}: non-finite value at slot {i}"
            )));
        }
        Ok(Self {
            sensor_id,
            grid,
            values,
        })
    }

    /// Builds a series from dense values; NaN entries become missing.
    pub fn from_dense(sensor_id: impl Into<String>, grid: TimeGrid, values: &[f64]) -> Result<Self> {
        let values = values
            .iter()
            .map(|&v| if v.is_nan() { None } else { Some(v) })
            .collect();
        Self::new(sensor_id, grid, values)
    }

    pub fn sensor_id(&self) -> &str {
        &self.sensor_id
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn value(&self, slot: usize) -> Option<f64> {
        self.values.get(slot).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_none).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.n_missing() as f64 / self.len() as f64
    }

    /// Non-missing values in slot order.
    pub fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter_map(|v| *v)
    }

    pub fn with_id(mut self, sensor_id: impl Into<String>) -> Self {
        self.sensor_id = sensor_id.into();
        self
    }

    /// Same sensor and grid with replaced values.
    pub fn with_values(&self, values: Vec<Option<f64>>) -> Result<Self> {
        Self::new(self.sensor_id.clone(), self.grid, values)
    }

    /// Longest trailing run of non-missing values.
    pub fn trailing_complete(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .values
            .iter()
            .rev()
            .map_while(|v| *v)
            .collect();
        out.reverse();
        out
    }
}

/// A training window of `length_hours` slots ending (exclusive) at `end_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_hours: usize,
    pub end_slot: usize,
}

impl WindowSpec {
    pub fn new(length_hours: usize, end_slot: usize) -> Result<Self> {
        if !(WINDOW_MIN_HOURS..=WINDOW_MAX_HOURS).contains(&length_hours) {
            return Err(Error::InvalidWindow(format!(
                "length {length_hours} h outside [{WINDOW_MIN_HOURS}, {WINDOW_MAX_HOURS}]"
            )));
        }
        if end_slot < length_hours {
            return Err(Error::InvalidWindow(format!(
                "window of {length_hours} h cannot end at slot {end_slot}"
            )));
        }
        Ok(Self {
            length_hours,
            end_slot,
        })
    }

    /// Window ending at `end_slot` with the requested length clamped to what
    /// is available and to the accepted range.
    pub fn trailing(length_hours: usize, end_slot: usize) -> Result<Self> {
        let length = length_hours
            .clamp(WINDOW_MIN_HOURS, WINDOW_MAX_HOURS)
            .min(end_slot);
        Self::new(length, end_slot)
    }

    pub fn start_slot(&self) -> usize {
        self.end_slot - self.length_hours
    }

    pub fn check_against(&self, n_slots: usize) -> Result<()> {
        if self.end_slot > n_slots {
            return Err(Error::InvalidWindow(format!(
                "window ends at slot {} but series has {n_slots} slots",
                self.end_slot
            )));
        }
        Ok(())
    }
}

/// Statistic used to collapse the readings within one hourly slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

/// Aggregates raw readings onto `grid`, one series per sensor.
///
/// Readings are bucketed into half-open hourly slots. Values within a slot are
/// sorted before aggregation so the result does not depend on input order.
pub fn resample_hourly(
    readings: &[RawReading],
    grid: TimeGrid,
    aggregation: Aggregation,
) -> Result<BTreeMap<String, SensorSeries>> {
    if readings.is_empty() {
        return Err(Error::NoReadings);
    }
    let mut buckets: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for (index, r) in readings.iter().enumerate() {
        let slot = grid.slot_of(r.timestamp).ok_or_else(|| Error::ReadingOutsideGrid {
            index,
            sensor_id: r.sensor_id.clone(),
            timestamp: r.timestamp.to_string(),
        })?;
        if !r.vwc.is_finite() {
            return Err(Error::Degenerate(format!("reading {index} has non-finite vwc")));
        }
        buckets
            .entry(r.sensor_id.as_str())
            .or_insert_with(|| vec![Vec::new(); grid.n_slots()])[slot]
            .push(r.vwc);
    }

    buckets
        .into_iter()
        .map(|(id, slots)| {
            let values = slots
                .into_iter()
                .map(|mut vals| {
                    if vals.is_empty() {
                        return None;
                    }
                    vals.sort_by(f64::total_cmp);
                    Some(match aggregation {
                        Aggregation::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                        Aggregation::Median => median_sorted(&vals),
                    })
                })
                .collect();
            Ok((id.to_string(), SensorSeries::new(id, grid, values)?))
        })
        .collect()
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// `out[i] = x[i] - x[i - lag]`; the first `lag` slots are missing.
pub fn seasonal_difference(series: &SensorSeries, lag_hours: usize) -> Result<SensorSeries> {
    if lag_hours == 0 || lag_hours >= series.len() {
        return Err(Error::InvalidLag {
            lag: lag_hours,
            len: series.len(),
        });
    }
    let v = series.values();
    let values = (0..v.len())
        .map(|i| {
            if i < lag_hours {
                None
            } else {
                match (v[i], v[i - lag_hours]) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                }
            }
        })
        .collect();
    series.with_values(values)
}

/// Inverts [`seasonal_difference`] by cumulative summation seeded with the
/// first `lag` original values.
pub fn seasonal_integrate(differenced: &[f64], initial: &[f64]) -> Vec<f64> {
    let lag = initial.len();
    let mut out = initial.to_vec();
    out.reserve(differenced.len().saturating_sub(lag));
    for i in lag..differenced.len() {
        let prev = out[i - lag];
        out.push(differenced[i] + prev);
    }
    out
}

pub fn slice_window(series: &SensorSeries, spec: WindowSpec) -> Result<SensorSeries> {
    spec.check_against(series.len())?;
    let start = spec.start_slot();
    let grid = series.grid().sub_grid(start, spec.length_hours)?;
    SensorSeries::new(
        series.sensor_id(),
        grid,
        series.values()[start..spec.end_slot].to_vec(),
    )
}

/// A set of sensor series sharing one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    grid: TimeGrid,
    series: BTreeMap<String, SensorSeries>,
}

impl Dataset {
    pub fn new(grid: TimeGrid, series: BTreeMap<String, SensorSeries>) -> Result<Self> {
        if let Some(bad) = series.values().find(|s| s.grid() != grid) {
            return Err(Error::InvalidGrid(format!(
                "{} is not on the dataset grid",
                bad.sensor_id()
            )));
        }
        Ok(Self { grid, series })
    }

    pub fn from_series(series: Vec<SensorSeries>) -> Result<Self> {
        let grid = series
            .first()
            .ok_or_else(|| Error::InsufficientData("empty dataset".into()))?
            .grid();
        Self::new(
            grid,
            series
                .into_iter()
                .map(|s| (s.sensor_id().to_string(), s))
                .collect(),
        )
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_slots(&self) -> usize {
        self.grid.n_slots()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = &str> {
        self.series.keys().map(String::as_str)
    }

    pub fn get(&self, sensor_id: &str) -> Result<&SensorSeries> {
        self.series
            .get(sensor_id)
            .ok_or_else(|| Error::UnknownSensor(sensor_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorSeries> {
        self.series.values()
    }

    pub fn series(&self) -> &BTreeMap<String, SensorSeries> {
        &self.series
    }

    pub fn replace(&mut self, series: SensorSeries) -> Result<()> {
        if series.grid() != self.grid {
            return Err(Error::InvalidGrid(format!(
                "{} is not on the dataset grid",
                series.sensor_id()
            )));
        }
        self.series.insert(series.sensor_id().to_string(), series);
        Ok(())
    }

    /// The first `n_slots` slots of every series.
    pub fn truncate(&self, n_slots: usize) -> Result<Self> {
        let grid = self.grid.sub_grid(0, n_slots)?;
        let series = self
            .series
            .iter()
            .map(|(id, s)| {
                Ok((
                    id.clone(),
                    SensorSeries::new(id.clone(), grid, s.values()[..n_slots].to_vec())?,
                ))
            })
            .collect::<Result<_>>()?;
        Self::new(grid, series)
    }
}
