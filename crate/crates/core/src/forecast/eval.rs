//! Rolling-origin evaluation: one origin per day at a fixed hour, fit on the
//! trailing window, score the next `horizon_hours` against the actuals.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Forecaster, HORIZON_MAX_HOURS, HORIZON_MIN_HOURS};
use crate::data::{slice_window, Dataset, WindowSpec, WINDOW_MAX_HOURS, WINDOW_MIN_HOURS};
use crate::error::{Error, Result};
use crate::stats::{mean, quantile};

pub const PERCENTILE_NOTE: &str = "P75 by linear interpolation between closest ranks, rank = 0.75 * (n - 1)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub window_hours: usize,
    pub horizon_hours: usize,
    /// Local hour of every forecast origin (daily step).
    pub origin_hour: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            window_hours: 500,
            horizon_hours: 24,
            origin_hour: 16,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(WINDOW_MIN_HOURS..=WINDOW_MAX_HOURS).contains(&self.window_hours)
            || !(HORIZON_MIN_HOURS..=HORIZON_MAX_HOURS).contains(&self.horizon_hours)
            || self.origin_hour > 23
        {
            return Err(Error::Config(format!(
                "evaluation needs window in [{WINDOW_MIN_HOURS}, {WINDOW_MAX_HOURS}], horizon in \
                 [{HORIZON_MIN_HOURS}, {HORIZON_MAX_HOURS}] and origin_hour <= 23"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorScore {
    pub sensor_id: String,
    pub model: String,
    /// Mean over origins of the per-origin MAE, VWC %.
    pub mae: f64,
    pub n_origins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_mae: f64,
    pub p75_mae: f64,
    pub n_sensors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<SensorScore>,
    pub summaries: Vec<ModelSummary>,
    /// `(model, sensor)` pairs with no valid origin.
    pub excluded: Vec<(String, String)>,
    pub origins: Vec<usize>,
}

impl EvalReport {
    pub fn summary(&self, model: &str) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.model == model)
    }

    /// Per-sensor rows followed by the per-model summary block.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {PERCENTILE_NOTE}\nsensor_id,model,mae\n");
        for r in &self.scores {
            let _ = writeln!(s, "{},{},{:.6}", r.sensor_id, r.model, r.mae);
        }
        s.push_str("\nmodel,mean_mae,p75_mae\n");
        for m in &self.summaries {
            let _ = writeln!(s, "{},{:.6},{:.6}", m.model, m.mean_mae, m.p75_mae);
        }
        for (model, sensor) in &self.excluded {
            let _ = writeln!(s, "# excluded {model} {sensor}: no valid origin");
        }
        s
    }
}

/// Daily origins at `origin_hour` with a full window behind and a full
/// horizon ahead.
pub fn origins(dataset: &Dataset, config: &EvalConfig) -> Vec<usize> {
    let grid = dataset.grid();
    (config.window_hours..=dataset.n_slots().saturating_sub(config.horizon_hours))
        .filter(|&o| grid.hour_of_day(o) == config.origin_hour)
        .collect()
}

fn score_sensor(
    dataset: &Dataset,
    sensor_id: &str,
    model: &dyn Forecaster,
    origins: &[usize],
    config: &EvalConfig,
) -> Result<Option<(f64, usize)>> {
    let series = dataset.get(sensor_id)?;
    let mut per_origin = Vec::new();
    for &o in origins {
        let window = slice_window(series, WindowSpec::new(config.window_hours, o)?)?;
        let Ok(forecast) = model.forecast(&window, config.horizon_hours) else { continue };
        let errs: Vec<f64> = forecast
            .iter()
            .zip(&series.values()[o..o + config.horizon_hours])
            .filter_map(|(f, a)| a.map(|a| (f - a).abs()))
            .collect();
        if !errs.is_empty() {
            per_origin.push(mean(&errs));
        }
    }
    Ok((!per_origin.is_empty()).then(|| (mean(&per_origin), per_origin.len())))
}

pub fn rolling_origin_evaluate(
    dataset: &Dataset,
    models: &[&dyn Forecaster],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let origins = origins(dataset, config);
    if origins.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} slots leave no origin for a {} h window and {} h horizon",
            dataset.n_slots(),
            config.window_hours,
            config.horizon_hours
        )));
    }
    let ids: Vec<&str> = dataset.sensor_ids().collect();
    let mut report = EvalReport {
        scores: Vec::new(),
        summaries: Vec::new(),
        excluded: Vec::new(),
        origins: origins.clone(),
    };
    for model in models {
        let results: Vec<Result<Option<(f64, usize)>>> = ids
            .par_iter()
            .map(|id| score_sensor(dataset, id, *model, &origins, config))
            .collect();
        let mut maes = Vec::new();
        for (id, res) in ids.iter().zip(results) {
            match res? {
                Some((mae, n_origins)) => {
                    maes.push(mae);
                    report.scores.push(SensorScore {
                        sensor_id: id.to_string(),
                        model: model.name().to_string(),
                        mae,
                        n_origins,
                    });
                }
                None => report.excluded.push((model.name().to_string(), id.to_string())),
            }
        }
        if let Some(p75) = quantile(&maes, 0.75) {
            report.summaries.push(ModelSummary {
                model: model.name().to_string(),
                mean_mae: mean(&maes),
                p75_mae: p75,
                n_sensors: maes.len(),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_start;
    use crate::data::{SensorSeries, TimeGrid};

    /// Looks the truth up in a captured copy of the data, plus a bias.
    struct Oracle {
        truth: Dataset,
        bias: f64,
    }

    impl Forecaster for Oracle {
        fn name(&self) -> &'static str {
            "oracle"
        }

        fn forecast(&self, window: &SensorSeries, horizon: usize) -> Result<Vec<f64>> {
            let start = self.truth.grid().slot_of(window.grid().end()).unwrap();
            let s = self.truth.get(window.sensor_id())?;
            Ok((start..start + horizon).map(|t| s.value(t).unwrap() + self.bias).collect())
        }
    }

    fn dataset() -> Dataset {
        let grid = TimeGrid::new(corpus_start(), 800).unwrap();
        let a: Vec<f64> = (0..800).map(|t| 20.0 + (t as f64 / 7.0).sin()).collect();
        let b: Vec<f64> = (0..800).map(|t| 25.0 + (t as f64 / 11.0).cos()).collect();
        Dataset::from_series(vec![
            SensorSeries::from_dense("A", grid, &a).unwrap(),
            SensorSeries::from_dense("B", grid, &b).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn perfect_and_biased_predictions() {
        let ds = dataset();
        let cfg = EvalConfig::default();
        for (bias, expected) in [(0.0, 0.0), (1.0, 1.0)] {
            let oracle = Oracle { truth: ds.clone(), bias };
            let r = rolling_origin_evaluate(&ds, &[&oracle], &cfg).unwrap();
            let s = r.summary("oracle").unwrap();
            assert!((s.mean_mae - expected).abs() < 1e-9 && (s.p75_mae - expected).abs() < 1e-9);
            assert!(r.scores.iter().all(|x| (x.mae - expected).abs() < 1e-9));
        }
    }

    #[test]
    fn origins_are_daily_at_origin_hour() {
        let ds = dataset();
        let o = origins(&ds, &EvalConfig::default());
        assert!(o.windows(2).all(|w| w[1] - w[0] == 24));
        assert!(o.iter().all(|&s| ds.grid().hour_of_day(s) == 16 && s >= 500 && s + 24 <= 800));
    }

    #[test]
    fn csv_has_rows_and_summary_block() {
        let ds = dataset();
        let oracle = Oracle { truth: ds.clone(), bias: 0.5 };
        let csv = rolling_origin_evaluate(&ds, &[&oracle], &EvalConfig::default()).unwrap().to_csv();
        assert!(csv.starts_with("# P75 by linear interpolation"));
        assert!(csv.contains("A,oracle,0.500000"));
        assert!(csv.contains("model,mean_mae,p75_mae\noracle,0.500000,0.500000"));
    }

    #[test]
    fn sensor_without_valid_origin_is_excluded() {
        let ds = dataset();
        let mut ds2 = ds.clone();
        let b = ds2.get("B").unwrap().clone();
        ds2.replace(b.with_values(vec![None; 800]).unwrap()).unwrap();
        let knn = crate::forecast::KnnConfig::default();
        let r = rolling_origin_evaluate(&ds2, &[&knn], &EvalConfig::default()).unwrap();
        assert_eq!(r.excluded, vec![("knn".to_string(), "B".to_string())]);
        assert_eq!(r.summary("knn").unwrap().n_sensors, 1);
    }
}
