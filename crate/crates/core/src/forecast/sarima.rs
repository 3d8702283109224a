//! Seasonal ARIMA baseline, (p, 0, q) x (P, 1, Q) with a 24 h season.
//!
//! Fitted in two least-squares passes: a long autoregression supplies
//! innovation estimates, then the differenced series is regressed on its own
//! lags and the lagged innovations. Forecasts run the innovations recursion
//! with future shocks at zero and undo the seasonal difference.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SensorSeries;
use crate::error::{Error, Result};
use crate::stats::{least_squares, mean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarimaConfig {
    pub seasonal_lag: usize,
    pub ar_order: usize,
    pub ma_order: usize,
    pub seasonal_ar_order: usize,
    pub seasonal_ma_order: usize,
    /// Upper bound on the order of the preliminary long autoregression.
    pub long_ar_max: usize,
}

impl Default for SarimaConfig {
    fn default() -> Self {
        Self {
            seasonal_lag: 24,
            ar_order: 2,
            ma_order: 0,
            seasonal_ar_order: 0,
            seasonal_ma_order: 1,
            long_ar_max: 48,
        }
    }
}

impl SarimaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seasonal_lag == 0 {
            return Err(Error::Config("sarima seasonal_lag must be positive".into()));
        }
        if self.ar_order + self.ma_order + self.seasonal_ar_order + self.seasonal_ma_order == 0 {
            return Err(Error::Config("sarima orders cannot all be zero".into()));
        }
        Ok(())
    }

    fn max_lag(&self) -> usize {
        self.ar_order
            .max(self.ma_order)
            .max(self.seasonal_lag * self.seasonal_ar_order.max(self.seasonal_ma_order))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SarimaFit {
    pub forecast: Vec<f64>,
    /// `[c, ar.., ma.., sar.., sma..]`; empty when the fallback was used.
    pub coefficients: Vec<f64>,
    /// Why the seasonal-persistence fallback replaced the fitted model.
    pub fallback: Option<String>,
}

struct Regressors<'a> {
    cfg: &'a SarimaConfig,
}

impl Regressors<'_> {
    fn row(&self, w: &[f64], e: &[f64], t: usize) -> Vec<f64> {
        let s = self.cfg.seasonal_lag;
        let mut r = vec![1.0];
        r.extend((1..=self.cfg.ar_order).map(|i| w[t - i]));
        r.extend((1..=self.cfg.ma_order).map(|i| e[t - i]));
        r.extend((1..=self.cfg.seasonal_ar_order).map(|j| w[t - j * s]));
        r.extend((1..=self.cfg.seasonal_ma_order).map(|j| e[t - j * s]));
        r
    }
}

fn long_ar_residuals(w: &[f64], order: usize) -> Result<Vec<f64>> {
    let rows = w.len() - order;
    let design = DMatrix::from_fn(rows, order + 1, |r, c| if c == 0 { 1.0 } else { w[r + order - c] });
    let target = DVector::from_iterator(rows, w[order..].iter().copied());
    let beta = least_squares(&design, &target)?;
    let fitted = &design * &beta;
    let mut e = vec![0.0; w.len()];
    for (i, f) in fitted.iter().enumerate() {
        e[order + i] = w[order + i] - f;
    }
    Ok(e)
}

fn fit_differenced(w: &[f64], cfg: &SarimaConfig) -> Result<Vec<f64>> {
    let m = (w.len() / 4).min(cfg.long_ar_max).max(cfg.max_lag() + 1);
    let has_ma = cfg.ma_order + cfg.seasonal_ma_order > 0;
    let e = if has_ma { long_ar_residuals(w, m)? } else { vec![0.0; w.len()] };
    let start = if has_ma { m + cfg.max_lag() } else { cfg.max_lag() };
    if w.len() <= start + 2 * (cfg.max_lag() + 1) {
        return Err(Error::InsufficientData("too few samples for the sarima regression".into()));
    }
    let reg = Regressors { cfg };
    let rows: Vec<Vec<f64>> = (start..w.len()).map(|t| reg.row(w, &e, t)).collect();
    let design = DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    let target = DVector::from_iterator(rows.len(), w[start..].iter().copied());
    Ok(least_squares(&design, &target)?.iter().copied().collect())
}

fn forecast_differenced(w: &[f64], beta: &[f64], cfg: &SarimaConfig, horizon: usize) -> Vec<f64> {
    // innovations over the sample, zero before enough history exists
    let lag = cfg.max_lag();
    let mut w = w.to_vec();
    let mut e = vec![0.0; w.len()];
    let reg = Regressors { cfg };
    for t in lag..w.len() {
        let pred: f64 = reg.row(&w, &e, t).iter().zip(beta).map(|(a, b)| a * b).sum();
        e[t] = w[t] - pred;
    }
    let n = w.len();
    for t in n..n + horizon {
        e.push(0.0);
        w.push(0.0);
        let pred: f64 = reg.row(&w, &e, t).iter().zip(beta).map(|(a, b)| a * b).sum();
        w[t] = pred;
    }
    w[n..].to_vec()
}

fn undifference(x: &[f64], w_future: &[f64], s: usize) -> Vec<f64> {
    let mut out: Vec<f64> = x[x.len() - s..].to_vec();
    for (h, dw) in w_future.iter().enumerate() {
        let v = out[h] + dw;
        out.push(v);
    }
    out[s..].to_vec()
}

/// Fits on the trailing contiguous run of `window` and forecasts `horizon`
/// hours. A degenerate fit falls back to seasonal persistence with the mean
/// seasonal change as drift, which for a constant series is the constant.
pub fn fit_forecast_sarima(window: &SensorSeries, config: &SarimaConfig, horizon: usize) -> Result<SarimaFit> {
    config.validate()?;
    let s = config.seasonal_lag;
    let x = window.trailing_complete();
    if x.len() < 2 * s + 1 {
        return Err(Error::InsufficientData(format!(
            "sarima needs two {s} h seasons of contiguous data, got {} h",
            x.len()
        )));
    }
    let w: Vec<f64> = (s..x.len()).map(|t| x[t] - x[t - s]).collect();
    let fitted = if w.iter().all(|v| *v == w[0]) {
        Err(Error::Degenerate("seasonally differenced series is constant".into()))
    } else {
        fit_differenced(&w, config)
    };
    let (w_future, coefficients, fallback) = match fitted {
        Ok(beta) if beta.iter().all(|b| b.is_finite()) => {
            let f = forecast_differenced(&w, &beta, config, horizon);
            if f.iter().all(|v| v.is_finite()) {
                (f, beta, None)
            } else {
                (vec![mean(&w); horizon], Vec::new(), Some("forecast diverged".to_string()))
            }
        }
        Ok(_) => (vec![mean(&w); horizon], Vec::new(), Some("non-finite coefficients".to_string())),
        Err(e) => (vec![mean(&w); horizon], Vec::new(), Some(e.to_string())),
    };
    if let Some(why) = &fallback {
        warn!("sarima for {}: seasonal persistence fallback ({why})", window.sensor_id());
    }
    Ok(SarimaFit {
        forecast: undifference(&x, &w_future, s),
        coefficients,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_start;
    use crate::data::TimeGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn series(values: &[f64]) -> SensorSeries {
        SensorSeries::from_dense("S", TimeGrid::new(corpus_start(), values.len()).unwrap(), values).unwrap()
    }

    fn periodic(n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| 22.0 + 2.0 * (2.0 * PI * t as f64 / 24.0).sin() + ((t % 24) as f64 * 0.05).powi(2))
            .collect()
    }

    #[test]
    fn periodic_series_is_forecast_exactly() {
        let v = periodic(524);
        let fit = fit_forecast_sarima(&series(&v[..500]), &SarimaConfig::default(), 24).unwrap();
        let mae: f64 = fit.forecast.iter().zip(&v[500..]).map(|(a, b)| (a - b).abs()).sum::<f64>() / 24.0;
        assert!(mae < 0.05, "mae {mae}");
    }

    #[test]
    fn constant_series_falls_back_to_constant() {
        let fit = fit_forecast_sarima(&series(&[19.5; 300]), &SarimaConfig::default(), 48).unwrap();
        assert!(fit.fallback.is_some());
        assert_eq!(fit.forecast, vec![19.5; 48]);
    }

    #[test]
    fn ar_coefficient_recovered_on_seasonal_ar1() {
        // w_t = 0.6 w_{t-1} + e_t, then integrate at lag 24 onto a daily cycle
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 800 + 24;
        let mut w = vec![0.0f64; n];
        for t in 1..n {
            let e: f64 = rng.sample(StandardNormal);
            w[t] = 0.6 * w[t - 1] + e;
        }
        let mut x: Vec<f64> = (0..24).map(|t| 20.0 + (2.0 * PI * t as f64 / 24.0).sin()).collect();
        for t in 24..n {
            let v = x[t - 24] + w[t];
            x.push(v);
        }
        let cfg = SarimaConfig { ar_order: 1, seasonal_ma_order: 0, ..Default::default() };
        let fit = fit_forecast_sarima(&series(&x), &cfg, 24).unwrap();
        assert!(fit.fallback.is_none());
        assert!((fit.coefficients[1] - 0.6).abs() < 0.05, "{:?}", fit.coefficients);
    }

    #[test]
    fn seasonal_ma_is_estimated() {
        // w_t = e_t - 0.5 e_{t-24}
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 900;
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..n).map(|t| e[t] - if t >= 24 { 0.5 * e[t - 24] } else { 0.0 }).collect();
        let mut x = vec![10.0; 24];
        for t in 24..n {
            let v = x[t - 24] + w[t];
            x.push(v);
        }
        let cfg = SarimaConfig { ar_order: 0, ..Default::default() };
        let fit = fit_forecast_sarima(&series(&x), &cfg, 24).unwrap();
        let theta = fit.coefficients[1];
        assert!((theta + 0.5).abs() < 0.15, "{:?}", fit.coefficients);
    }

    #[test]
    fn too_short_and_bad_orders_rejected() {
        assert!(fit_forecast_sarima(&series(&periodic(40)), &SarimaConfig::default(), 24).is_err());
        let zero = SarimaConfig { ar_order: 0, seasonal_ma_order: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn undifference_matches_hand_computation() {
        let x: Vec<f64> = (0..48).map(|t| t as f64).collect();
        let out = undifference(&x, &[1.0; 30], 24);
        // slot 48 = x[24] + 1, slot 72 = slot 48 + 1
        assert_eq!(out[0], 25.0);
        assert_eq!(out[24], 26.0);
        assert_eq!(out.len(), 30);
    }
}
