//! k-nearest-neighbour forecaster over lagged windows.
//!
//! Each stored row pairs the `lags` previous hours plus a sin/cos encoding of
//! the target hour-of-day with the next-hour value. Features are z-scored
//! per window, so the model has no parameters beyond the stored rows.

use serde::{Deserialize, Serialize};

use super::{HORIZON_MAX_HOURS, HORIZON_MIN_HOURS};
use crate::data::{SensorSeries, TimeGrid, WINDOW_MAX_HOURS, WINDOW_MIN_HOURS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    /// Hourly lags 1..=lags feed every row.
    pub lags: usize,
    pub hour_of_day: bool,
    pub window_hours: usize,
    pub horizon_hours: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            lags: 24,
            hour_of_day: true,
            window_hours: 900,
            horizon_hours: 24,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 || self.lags == 0 {
            problems.push("knn needs k >= 1 and lags >= 1".to_string());
        }
        if !(HORIZON_MIN_HOURS..=HORIZON_MAX_HOURS).contains(&self.horizon_hours) {
            problems.push(format!(
                "knn horizon {} outside [{HORIZON_MIN_HOURS}, {HORIZON_MAX_HOURS}]",
                self.horizon_hours
            ));
        }
        if !(WINDOW_MIN_HOURS..=WINDOW_MAX_HOURS).contains(&self.window_hours) {
            problems.push(format!(
                "knn window {} outside [{WINDOW_MIN_HOURS}, {WINDOW_MAX_HOURS}]",
                self.window_hours
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn n_features(&self) -> usize {
        self.lags + if self.hour_of_day { 2 } else { 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub lags: usize,
    pub hour_of_day: bool,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Standardised feature rows, one per complete embedding.
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Last `lags` values of the window, oldest first.
    pub history: Vec<f64>,
    /// Grid the window lives on; forecast slot `h` is `grid.n_slots() + h`.
    pub grid: TimeGrid,
}

fn features(recent_first: impl Iterator<Item = f64>, hour: u32, hour_of_day: bool) -> Vec<f64> {
    let mut f: Vec<f64> = recent_first.collect();
    if hour_of_day {
        let angle = 2.0 * std::f64::consts::PI * hour as f64 / 24.0;
        f.push(angle.sin());
        f.push(angle.cos());
    }
    f
}

/// Builds the embedding of `window`. Rows touching a missing slot are dropped.
pub fn fit_knn(window: &SensorSeries, config: &KnnConfig) -> Result<KnnModel> {
    config.validate()?;
    let v = window.values();
    let n = v.len();
    let lags = config.lags;
    let grid = window.grid();

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut targets = Vec::new();
    for t in lags..n {
        let Some(y) = v[t] else { continue };
        let lagged: Option<Vec<f64>> = (1..=lags).map(|l| v[t - l]).collect();
        if let Some(lagged) = lagged {
            raw.push(features(lagged.into_iter(), grid.hour_of_day(t), config.hour_of_day));
            targets.push(y);
        }
    }
    if raw.len() < config.k.max(1) {
        return Err(Error::InsufficientData(format!(
            "{} complete embedding rows in {} h for k = {}; widen the window (200-900 h)",
            raw.len(),
            n,
            config.k
        )));
    }
    let history: Option<Vec<f64>> = v[n.saturating_sub(lags)..].iter().copied().collect();
    let history = match history {
        Some(h) if h.len() == lags => h,
        _ => {
            return Err(Error::InsufficientData(format!(
                "the last {lags} h of the window must be present to forecast"
            )))
        }
    };

    let d = config.n_features();
    let m = raw.len() as f64;
    let mut mean = vec![0.0; d];
    for row in &raw {
        for (a, x) in mean.iter_mut().zip(row) {
            *a += x / m;
        }
    }
    let mut scale = vec![0.0; d];
    for row in &raw {
        for ((s, x), mu) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (x - mu) * (x - mu) / m;
        }
    }
    for s in scale.iter_mut() {
        *s = s.sqrt();
        // constant features carry no distance information
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    let rows = raw
        .into_iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((x, mu), s)| (x - mu) / s).collect())
        .collect();
    Ok(KnnModel {
        k: config.k,
        lags,
        hour_of_day: config.hour_of_day,
        feature_mean: mean,
        feature_scale: scale,
        rows,
        targets,
        history,
        grid,
    })
}

impl KnnModel {
    /// Average target of the `k` rows nearest to the standardised `query`;
    /// equal distances go to the earlier row.
    fn predict(&self, query: &[f64]) -> f64 {
        let k = self.k.min(self.rows.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() < k || d < best[best.len() - 1].0 {
                let at = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(at, (d, i));
                best.truncate(k);
            }
        }
        best.iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / k as f64
    }
}

/// Recursive forecast: each prediction is appended to the lag buffer for the
/// next step.
pub fn forecast_knn(model: &KnnModel, horizon: usize) -> Result<Vec<f64>> {
    if !(HORIZON_MIN_HOURS..=HORIZON_MAX_HOURS).contains(&horizon) {
        return Err(Error::Config(format!(
            "horizon {horizon} outside [{HORIZON_MIN_HOURS}, {HORIZON_MAX_HOURS}]"
        )));
    }
    let mut buf = model.history.clone();
    let start = model.grid.n_slots();
    let mut out = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let hour = model.grid.hour_of_day(start + h);
        let f = features(buf.iter().rev().take(model.lags).copied(), hour, model.hour_of_day);
        let q: Vec<f64> = f
            .iter()
            .zip(&model.feature_mean)
            .zip(&model.feature_scale)
            .map(|((x, mu), s)| (x - mu) / s)
            .collect();
        let y = model.predict(&q);
        buf.push(y);
        out.push(y);
    }
    Ok(out)
}
