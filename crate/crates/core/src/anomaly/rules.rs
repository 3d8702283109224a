//! The five screening rules. Thresholds use strict inequalities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{runs, Evidence, FaultKind, FaultVerdict, RuleOutcome, SlotRange};
use crate::data::{median_sorted, SensorSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    /// Fraction of missing slots above which the window is rejected.
    pub missing_frac_max: f64,
    /// Longest tolerated run of missing slots, hours.
    pub gap_hours_max: usize,
    /// A span whose max-min stays below this (VWC %) is stuck.
    pub stuck_delta_pct: f64,
    pub stuck_span_hours: usize,
    pub valid_range: [f64; 2],
    pub spike_median_window_hours: usize,
    /// Absolute deviation from the moving median (VWC %) counted as a spike.
    pub spike_threshold_pct: f64,
    /// Per-sensor calibrated ranges overriding `valid_range`.
    pub range_overrides: BTreeMap<String, [f64; 2]>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            missing_frac_max: 0.5,
            gap_hours_max: 72,
            stuck_delta_pct: 1.0,
            stuck_span_hours: 120,
            valid_range: [0.0, 100.0],
            spike_median_window_hours: 24,
            spike_threshold_pct: 5.0,
            range_overrides: BTreeMap::new(),
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.missing_frac_max > 0.0 && self.missing_frac_max < 1.0) {
            problems.push("missing_frac_max must be in (0, 1)".to_string());
        }
        if self.gap_hours_max == 0 {
            problems.push("gap_hours_max must be positive".into());
        }
        if self.stuck_delta_pct <= 0.0 || self.stuck_span_hours < 2 {
            problems.push("stuck-at thresholds must be positive".into());
        }
        if self.spike_median_window_hours == 0 || self.spike_threshold_pct <= 0.0 {
            problems.push("spike thresholds must be positive".into());
        }
        for (who, r) in std::iter::once(("default", &self.valid_range))
            .chain(self.range_overrides.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if r[0] >= r[1] {
                problems.push(format!("valid range for {who} is not ordered"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn valid_range_for(&self, sensor_id: &str) -> [f64; 2] {
        self.range_overrides
            .get(sensor_id)
            .copied()
            .unwrap_or(self.valid_range)
    }
}

fn require_nonempty(series: &SensorSeries) -> Result<()> {
    if series.is_empty() {
        Err(Error::InsufficientData(format!("{} is empty", series.sensor_id())))
    } else {
        Ok(())
    }
}

pub fn check_missingness(series: &SensorSeries, config: &RuleConfig) -> Result<RuleOutcome> {
    require_nonempty(series)?;
    let frac = series.missing_fraction();
    Ok(RuleOutcome::new(
        FaultKind::Missingness,
        frac > config.missing_frac_max,
        Evidence {
            statistic: Some(frac),
            ..Default::default()
        },
    ))
}

pub fn check_long_gap(series: &SensorSeries, config: &RuleConfig) -> Result<RuleOutcome> {
    require_nonempty(series)?;
    let gaps = runs(
        series
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| i),
    );
    // first of the longest runs
    let longest = gaps
        .iter()
        .copied()
        .reduce(|best, r| if r.len() > best.len() { r } else { best });
    let len = longest.map_or(0, |r| r.len());
    Ok(RuleOutcome::new(
        FaultKind::LongGap,
        len > config.gap_hours_max,
        Evidence {
            slots: longest.into_iter().collect(),
            statistic: Some(len as f64),
            note: None,
        },
    ))
}

/// Fires when some `stuck_span_hours` span has max-min below
/// `stuck_delta_pct`. Spans with fewer than two present values are skipped.
pub fn check_stuck_at(series: &SensorSeries, config: &RuleConfig) -> Result<RuleOutcome> {
    require_nonempty(series)?;
    let span = config.stuck_span_hours;
    let values = series.values();
    if values.len() >= span {
        for start in 0..=values.len() - span {
            let mut present = values[start..start + span].iter().flatten();
            let Some(&first) = present.next() else {
                continue;
            };
            let (lo, hi, count) = present.fold((first, first, 1usize), |(lo, hi, c), &v| {
                (lo.min(v), hi.max(v), c + 1)
            });
            if count >= 2 && hi - lo < config.stuck_delta_pct {
                return Ok(RuleOutcome::new(
                    FaultKind::StuckAt,
                    true,
                    Evidence {
                        slots: vec![SlotRange {
                            start,
                            end: start + span,
                        }],
                        statistic: Some(hi - lo),
                        note: None,
                    },
                ));
            }
        }
    }
    Ok(RuleOutcome::new(FaultKind::StuckAt, false, Evidence::default()))
}

pub fn check_out_of_range(series: &SensorSeries, config: &RuleConfig) -> Result<RuleOutcome> {
    let [lo, hi] = config.valid_range_for(series.sensor_id());
    let offending = runs(
        series
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some_and(|x| x < lo || x > hi))
            .map(|(i, _)| i),
    );
    Ok(RuleOutcome::new(
        FaultKind::OutOfRange,
        !offending.is_empty(),
        Evidence {
            slots: offending,
            ..Default::default()
        },
    ))
}

/// Centered moving median over `window` slots (`[i - w/2, i + w/2)`), shrinking
/// at the series edges. Slots whose neighbourhood has no present value get `None`.
pub fn moving_median(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let half = window / 2;
    let mut buf = Vec::with_capacity(window + 1);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(values.len());
            buf.clear();
            buf.extend(values[lo..hi].iter().flatten());
            if buf.is_empty() {
                return None;
            }
            buf.sort_by(f64::total_cmp);
            Some(median_sorted(&buf))
        })
        .collect()
}

pub fn check_spikes(series: &SensorSeries, config: &RuleConfig) -> Result<RuleOutcome> {
    let window = config.spike_median_window_hours;
    if series.len() < window {
        return Err(Error::InsufficientData(format!(
            "{}: {} slots is shorter than the {window} h median window",
            series.sensor_id(),
            series.len()
        )));
    }
    let medians = moving_median(series.values(), window);
    let mut worst: f64 = 0.0;
    let offending: Vec<usize> = series
        .values()
        .iter()
        .zip(&medians)
        .enumerate()
        .filter_map(|(i, (v, m))| {
            let dev = (v.as_ref()? - m.as_ref()?).abs();
            worst = worst.max(dev);
            (dev > config.spike_threshold_pct).then_some(i)
        })
        .collect();
    Ok(RuleOutcome::new(
        FaultKind::Spike,
        !offending.is_empty(),
        Evidence {
            slots: runs(offending),
            statistic: Some(worst),
            note: None,
        },
    ))
}

/// Runs all five rules and unions the fired set.
pub fn screen(series: &SensorSeries, config: &RuleConfig) -> Result<FaultVerdict> {
    let mut verdict = FaultVerdict::empty(series);
    for check in [
        check_missingness,
        check_long_gap,
        check_stuck_at,
        check_out_of_range,
        check_spikes,
    ] {
        verdict.record(check(series, config)?);
    }
    Ok(verdict)
}
