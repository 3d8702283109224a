//! Seeded surrogate of the 13-sensor park replay corpus.
//!
//! The published corpus (hourly VWC for 13 soil-moisture probes,
//! 2022-11-15 00:00 to 2023-01-17 15:00, 118,024 raw readings) is not always
//! at hand, so this module synthesises a stand-in with the same shape: the
//! same span and sensor count, ten-minute raw readings thinned to exactly
//! 118,024 rows, and every hourly slot populated.
//!
//! Each probe follows a latent zone moisture state driven by diurnal
//! evapotranspiration, nightly controller irrigation and park-wide rain,
//! plus probe-specific gain, offset, slow drift and measurement noise.
//! SENS0012 and SENS0021 share a zone and are the most tightly coupled pair.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{resample_hourly, Aggregation, Dataset, RawReading, TimeGrid};
use crate::error::Result;
use crate::rng;

pub const CORPUS_SLOTS: usize = 1_528;
pub const CORPUS_RAW_READINGS: usize = 118_024;
pub const READINGS_PER_SLOT: usize = 6;
pub const DEFAULT_CORPUS_SEED: u64 = 20_221_115;

pub fn corpus_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2022, 11, 15)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

pub fn corpus_grid() -> TimeGrid {
    TimeGrid::new(corpus_start(), CORPUS_SLOTS).expect("static grid")
}

struct ProbeSpec {
    id: &'static str,
    zone: usize,
    base: f64,
    gain: f64,
    drift_sd: f64,
}

const PROBES: [ProbeSpec; 13] = [
    ProbeSpec { id: "SENS0003", zone: 0, base: 24.0, gain: 1.00, drift_sd: 0.012 },
    ProbeSpec { id: "SENS0005", zone: 0, base: 27.5, gain: 0.85, drift_sd: 0.020 },
    ProbeSpec { id: "SENS0007", zone: 0, base: 21.0, gain: 1.15, drift_sd: 0.025 },
    ProbeSpec { id: "SENS0010", zone: 1, base: 30.0, gain: 0.80, drift_sd: 0.030 },
    ProbeSpec { id: "SENS0012", zone: 1, base: 33.0, gain: 1.10, drift_sd: 0.006 },
    ProbeSpec { id: "SENS0014", zone: 2, base: 19.5, gain: 0.95, drift_sd: 0.015 },
    ProbeSpec { id: "SENS0017", zone: 2, base: 23.0, gain: 1.20, drift_sd: 0.020 },
    ProbeSpec { id: "SENS0019", zone: 3, base: 26.0, gain: 0.90, drift_sd: 0.018 },
    ProbeSpec { id: "SENS0021", zone: 1, base: 25.0, gain: 1.00, drift_sd: 0.006 },
    ProbeSpec { id: "SENS0023", zone: 3, base: 28.5, gain: 1.05, drift_sd: 0.022 },
    ProbeSpec { id: "SENS0026", zone: 4, base: 22.0, gain: 1.10, drift_sd: 0.015 },
    ProbeSpec { id: "SENS0028", zone: 4, base: 20.5, gain: 0.85, drift_sd: 0.025 },
    ProbeSpec { id: "SENS0030", zone: 4, base: 31.0, gain: 0.95, drift_sd: 0.018 },
];

struct ZoneSpec {
    id: &'static str,
    /// Controller threshold: irrigate overnight when the state is below it.
    trigger: f64,
    /// Hour of day irrigation starts.
    start_hour: u32,
    /// Increment per irrigated hour, % VWC.
    rate: f64,
    et_scale: f64,
}

const ZONES: [ZoneSpec; 5] = [
    ZoneSpec { id: "Z1", trigger: 21.5, start_hour: 1, rate: 0.90, et_scale: 1.00 },
    ZoneSpec { id: "Z2", trigger: 22.5, start_hour: 3, rate: 0.95, et_scale: 1.15 },
    ZoneSpec { id: "Z3", trigger: 20.5, start_hour: 23, rate: 0.85, et_scale: 0.90 },
    ZoneSpec { id: "Z4", trigger: 22.0, start_hour: 2, rate: 1.00, et_scale: 1.05 },
    ZoneSpec { id: "Z5", trigger: 21.0, start_hour: 0, rate: 0.85, et_scale: 0.95 },
];

const FIELD_CAPACITY: f64 = 30.0;
const WILTING_POINT: f64 = 12.0;
const REFERENCE_STATE: f64 = 22.0;

/// Synthetic corpus plus the ground truth that generated it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub readings: Vec<RawReading>,
    pub hourly: Dataset,
    /// Rain in mm over the 24 h following 16:00 of each date.
    pub precip_forecast_mm: Vec<(NaiveDate, f64)>,
    /// Zone id and member sensor ids.
    pub zones: Vec<(String, Vec<String>)>,
}

/// Rain depth (mm) that raises the zone state by one VWC-percent.
const MM_PER_VWC: f64 = 1.6;

const PRECIP_ISSUE_HOUR: usize = 16;

pub fn generate(seed: u64) -> Result<SyntheticCorpus> {
    let grid = corpus_grid();
    let n = grid.n_slots();
    let mut weather = rng::stream(seed, &["corpus", "weather"]);

    let n_days = n.div_ceil(24) + 1;
    let et_day: Vec<f64> = (0..n_days)
        .map(|_| 0.75 + 0.55 * weather.random::<f64>())
        .collect();

    // Park-wide rain, % VWC added per hour.
    let mut rain = vec![0.0; n];
    let n_events = 7;
    // one event per block, in the block's first half, so storms stay apart
    let block = (n - 60) / n_events;
    for b in 0..n_events {
        let start = 48 + b * block + weather.random_range(0..block / 2);
        let duration = weather.random_range(4..10usize);
        let total = 1.2 + 2.0 * weather.random::<f64>();
        for h in 0..duration {
            if start + h < n {
                rain[start + h] += total / duration as f64;
            }
        }
    }

    let mut states = vec![vec![0.0; n]; ZONES.len()];
    for (zi, zone) in ZONES.iter().enumerate() {
        let mut zrng = rng::stream(seed, &["corpus", "zone", zone.id]);
        let mut z = REFERENCE_STATE + zrng.random_range(-1.0..1.0);
        let mut irrigating_until: Option<usize> = None;
        for t in 0..n {
            let hour = grid.hour_of_day(t);
            let day = t / 24;
            let solar = ((std::f64::consts::PI * (hour as f64 - 6.0) / 12.0).sin()).max(0.0);
            let et = 0.11 * zone.et_scale * et_day[day] * (0.15 + solar);
            let avail = ((z - WILTING_POINT) / (FIELD_CAPACITY - WILTING_POINT)).clamp(0.0, 1.0);
            z -= et * avail;
            if hour == zone.start_hour && z < zone.trigger {
                irrigating_until = Some(t + 2);
            }
            if irrigating_until.is_some_and(|end| t < end) {
                z += zone.rate;
            }
            z += rain[t] * (0.9 + 0.2 * zrng.random::<f64>());
            if z > FIELD_CAPACITY {
                z -= 0.08 * (z - FIELD_CAPACITY);
            }
            states[zi][t] = z;
        }
    }

    let mut hourly_truth = Vec::with_capacity(PROBES.len());
    for probe in &PROBES {
        let mut prng = rng::stream(seed, &["corpus", "probe", probe.id]);
        let mut drift = 0.0;
        let series: Vec<f64> = (0..n)
            .map(|t| {
                let eps: f64 = prng.sample(StandardNormal);
                drift = 0.997 * drift + probe.drift_sd * eps;
                probe.base + probe.gain * (states[probe.zone][t] - REFERENCE_STATE) + drift
            })
            .collect();
        hourly_truth.push(series);
    }

    // Ten-minute raw readings, then thin to the published row count by
    // removing one reading from distinct (probe, slot) cells.
    let total_cells = PROBES.len() * n;
    let surplus = total_cells * READINGS_PER_SLOT - CORPUS_RAW_READINGS;
    let mut thin = rng::stream(seed, &["corpus", "thin"]);
    let mut dropped = vec![false; total_cells];
    for cell in index::sample(&mut thin, total_cells, surplus) {
        dropped[cell] = true;
    }

    let mut readings = Vec::with_capacity(CORPUS_RAW_READINGS);
    for (pi, probe) in PROBES.iter().enumerate() {
        let mut prng = rng::stream(seed, &["corpus", "raw", probe.id]);
        for t in 0..n {
            let drop_at = dropped[pi * n + t].then(|| prng.random_range(0..READINGS_PER_SLOT));
            for r in 0..READINGS_PER_SLOT {
                let noise: f64 = prng.sample(StandardNormal);
                if drop_at == Some(r) {
                    continue;
                }
                let frac = r as f64 / READINGS_PER_SLOT as f64;
                let next = hourly_truth[pi][(t + 1).min(n - 1)];
                let value = hourly_truth[pi][t] + (next - hourly_truth[pi][t]) * frac + 0.06 * noise;
                let second = prng.random_range(0..60);
                readings.push(RawReading {
                    sensor_id: probe.id.to_string(),
                    timestamp: grid.slot_time(t)
                        + Duration::minutes(10 * r as i64)
                        + Duration::seconds(second),
                    vwc: (value * 100.0).round() / 100.0,
                });
            }
        }
    }
    readings.sort_by(|a, b| (a.timestamp, &a.sensor_id).cmp(&(b.timestamp, &b.sensor_id)));

    let series = resample_hourly(&readings, grid, Aggregation::Mean)?;
    let hourly = Dataset::new(grid, series)?;

    // Perfect-knowledge precipitation forecast: the row for day D holds the
    // rain falling in the 24 h after the 16:00 run on D.
    let first_day = grid.start().date();
    let precip_forecast_mm = (0..)
        .map(|d| (d, d * 24 + PRECIP_ISSUE_HOUR))
        .take_while(|&(_, from)| from < n)
        .map(|(d, from)| {
            let mm: f64 = rain[from..(from + 24).min(n)].iter().sum::<f64>() * MM_PER_VWC;
            (first_day + Duration::days(d as i64), (mm * 10.0).round() / 10.0)
        })
        .collect();

    let zones = ZONES
        .iter()
        .enumerate()
        .map(|(zi, z)| {
            (
                z.id.to_string(),
                PROBES
                    .iter()
                    .filter(|p| p.zone == zi)
                    .map(|p| p.id.to_string())
                    .collect(),
            )
        })
        .collect();

    Ok(SyntheticCorpus {
        readings,
        hourly,
        precip_forecast_mm,
        zones,
    })
}
