//! Per-sensor soil-moisture forecasting: the kNN forecaster, a SARIMA
//! baseline and the rolling-origin evaluation harness.

mod eval;
mod knn;
mod sarima;

pub use eval::{rolling_origin_evaluate, EvalConfig, EvalReport, ModelSummary, SensorScore, PERCENTILE_NOTE};
pub use knn::{fit_knn, forecast_knn, KnnConfig, KnnModel};
pub use sarima::{fit_forecast_sarima, SarimaConfig, SarimaFit};

use crate::data::SensorSeries;
use crate::error::Result;

pub const HORIZON_MIN_HOURS: usize = 24;
pub const HORIZON_MAX_HOURS: usize = 72;

/// A model that fits on a trailing window and forecasts the hours right
/// after it.
pub trait Forecaster: Sync {
    fn name(&self) -> &'static str;
    fn forecast(&self, window: &SensorSeries, horizon: usize) -> Result<Vec<f64>>;
}

impl Forecaster for KnnConfig {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn forecast(&self, window: &SensorSeries, horizon: usize) -> Result<Vec<f64>> {
        forecast_knn(&fit_knn(window, self)?, horizon)
    }
}

impl Forecaster for SarimaConfig {
    fn name(&self) -> &'static str {
        "sarima"
    }

    fn forecast(&self, window: &SensorSeries, horizon: usize) -> Result<Vec<f64>> {
        Ok(fit_forecast_sarima(window, self, horizon)?.forecast)
    }
}
