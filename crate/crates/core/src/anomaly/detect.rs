//! Model-based detectors on seasonally differenced windows.
//!
//! Both detectors hold out the most recent part of the screened window: the
//! isolation forest scores the last `score_hours` (at most half of the
//! differenced samples) after fitting on the remainder, and the AR detector
//! compares a recursive forecast against the final `arima_horizon` hours.

use serde::{Deserialize, Serialize};

use super::ar::{ArModel, SigmaMode};
use super::iforest::{embed, IForestModel, IForestParams};
use super::{runs, Evidence, FaultKind, RuleOutcome};
use crate::data::{seasonal_difference, SensorSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// A sensor is flagged when more than this fraction of points is anomalous.
    pub flag_fraction: f64,
    pub arima_sigma_mult: f64,
    pub arima_sigma: SigmaMode,
    pub arima_horizon: usize,
    pub ar_order: usize,
    /// Differencing lag in hours (24 daily, 168 weekly).
    pub seasonal_lag: usize,
    pub score_hours: usize,
    pub iforest: IForestParams,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            flag_fraction: 0.30,
            arima_sigma_mult: 2.0,
            arima_sigma: SigmaMode::default(),
            arima_horizon: 24,
            ar_order: 24,
            seasonal_lag: 24,
            score_hours: 168,
            iforest: IForestParams::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.flag_fraction > 0.0 && self.flag_fraction < 1.0) {
            problems.push("flag_fraction must be in (0, 1)".to_string());
        }
        if self.arima_sigma_mult <= 0.0 {
            problems.push("arima_sigma_mult must be positive".into());
        }
        if self.arima_horizon == 0 || self.seasonal_lag == 0 || self.score_hours == 0 {
            problems.push("detector horizons and lags must be positive".into());
        }
        if let Err(e) = self.iforest.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Fits the forest on the embedding of a differenced window.
pub fn fit_iforest(training: &SensorSeries, config: &DetectorConfig, seed: u64) -> Result<IForestModel> {
    let (points, _) = embed(training.values());
    IForestModel::fit(&points, config.iforest, seed)
}

/// Fires when more than `flag_fraction` of the window's points score above
/// the model threshold.
pub fn detect_iforest(model: &IForestModel, window: &SensorSeries, config: &DetectorConfig) -> RuleOutcome {
    let (points, slots) = embed(window.values());
    let flagged: Vec<usize> = points
        .iter()
        .zip(&slots)
        .filter(|(p, _)| model.is_anomalous(p))
        .map(|(_, s)| *s)
        .collect();
    let frac = if points.is_empty() {
        0.0
    } else {
        flagged.len() as f64 / points.len() as f64
    };
    RuleOutcome::new(
        FaultKind::IForest,
        frac > config.flag_fraction,
        Evidence {
            slots: runs(flagged),
            statistic: Some(frac),
            note: None,
        },
    )
}

/// Fits the AR model on the trailing contiguous run of a differenced window.
pub fn fit_ar(training: &SensorSeries, config: &DetectorConfig) -> Result<ArModel> {
    ArModel::fit(&training.trailing_complete(), config.ar_order, config.seasonal_lag)
}

/// Fires when `|actual - forecast| > k sigma` on more than `flag_fraction`
/// of the points (8 or more of 24 by default). Sigma is the one-step residual
/// deviation or the h-step forecast standard error, per `arima_sigma`.
pub fn detect_ar_residuals(model: &ArModel, actual: &[f64], config: &DetectorConfig) -> RuleOutcome {
    let forecast = model.forecast(actual.len());
    let limits = model.limits(actual.len(), config.arima_sigma_mult, config.arima_sigma);
    let exceed: Vec<usize> = actual
        .iter()
        .zip(&forecast)
        .zip(&limits)
        .enumerate()
        .filter(|(_, ((a, f), l))| (*a - *f).abs() > **l)
        .map(|(i, _)| i)
        .collect();
    let frac = exceed.len() as f64 / actual.len().max(1) as f64;
    let note = format!(
        "{} of {} points beyond {:.4}..{:.4}",
        exceed.len(),
        actual.len(),
        limits.first().copied().unwrap_or(0.0),
        limits.last().copied().unwrap_or(0.0)
    );
    RuleOutcome::new(
        FaultKind::Arima,
        frac > config.flag_fraction,
        Evidence {
            slots: runs(exceed),
            statistic: Some(frac),
            note: Some(note),
        },
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorReport {
    pub outcomes: Vec<RuleOutcome>,
    /// Detectors that could not run, with the reason.
    pub skipped: Vec<String>,
}

/// Runs both detectors on a raw (undifferenced) window. Detectors that cannot
/// fit are reported as skipped rather than failing the screen.
pub fn run_detectors(series: &SensorSeries, config: &DetectorConfig, seed: u64) -> Result<DetectorReport> {
    let mut report = DetectorReport::default();
    let diff = match seasonal_difference(series, config.seasonal_lag) {
        Ok(d) => d,
        Err(e) => {
            report.skipped.push(format!("IForest: {e}"));
            report.skipped.push(format!("Arima: {e}"));
            return Ok(report);
        }
    };
    let n = diff.len();
    let usable = n - config.seasonal_lag;

    let score_len = config.score_hours.min(usable / 2);
    let split = n - score_len;
    let head = diff.with_values(
        diff.values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i < split { *v } else { None })
            .collect(),
    )?;
    // the scored slice keeps one slot of overlap for the first difference
    let tail = diff.with_values(
        diff.values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i + 1 >= split { *v } else { None })
            .collect(),
    )?;
    match fit_iforest(&head, config, seed) {
        Ok(model) => report.outcomes.push(detect_iforest(&model, &tail, config)),
        Err(e) => report.skipped.push(format!("IForest: {e}")),
    }

    let h = config.arima_horizon;
    let actual: Option<Vec<f64>> = (n > h)
        .then(|| diff.values()[n - h..].iter().copied().collect())
        .flatten();
    match actual {
        Some(actual) => {
            let prefix = diff.grid().sub_grid(0, n - h).and_then(|g| {
                SensorSeries::new(diff.sensor_id(), g, diff.values()[..n - h].to_vec())
            });
            match prefix.and_then(|t| fit_ar(&t, config)) {
                Ok(model) => {
                    let mut outcome = detect_ar_residuals(&model, &actual, config);
                    // evidence slots count from the forecast start
                    for r in outcome.evidence.slots.iter_mut() {
                        r.start += n - h;
                        r.end += n - h;
                    }
                    report.outcomes.push(outcome);
                }
                Err(e) => report.skipped.push(format!("Arima: {e}")),
            }
        }
        None => report
            .skipped
            .push("Arima: final forecast hours are incomplete".to_string()),
    }
    Ok(report)
}
