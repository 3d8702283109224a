//! Least-squares AR(p) model for seasonally differenced series, used by the
//! residual detector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{least_squares, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub seasonal_lag: usize,
    pub ar_order: usize,
    /// `coefficients[j]` multiplies `x_{t-1-j}`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Sample standard deviation of the in-sample one-step residuals.
    pub sigma: f64,
    /// Last `ar_order` training values, oldest first.
    pub tail: Vec<f64>,
}

/// Builds the lagged design `[1, x_{t-1}, ..., x_{t-p}]` and targets `x_t`.
pub(crate) fn lagged_design(values: &[f64], order: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rows = values.len() - order;
    let design = DMatrix::from_fn(rows, order + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            values[r + order - c]
        }
    });
    let target = DVector::from_iterator(rows, values[order..].iter().copied());
    (design, target)
}

impl ArModel {
    /// Fits AR(`order`) with intercept to contiguous `values`.
    pub fn fit(values: &[f64], order: usize, seasonal_lag: usize) -> Result<Self> {
        if values.len() < order + 24 || values.len() <= 2 * order + 1 {
            return Err(Error::InsufficientData(format!(
                "AR({order}) needs at least {} contiguous samples, got {}",
                (order + 24).max(2 * order + 2),
                values.len()
            )));
        }
        if values.iter().all(|v| *v == values[0]) {
            return Err(Error::Degenerate(
                "constant input, AR detector disabled for this window".into(),
            ));
        }
        let (design, target) = lagged_design(values, order);
        let beta = least_squares(&design, &target)?;
        let residuals: Vec<f64> = (&target - &design * &beta).iter().copied().collect();
        let sigma = std_dev(&residuals);
        if !(sigma > 0.0) {
            return Err(Error::Degenerate("zero residual variance".into()));
        }
        Ok(Self {
            seasonal_lag,
            ar_order: order,
            coefficients: beta.iter().skip(1).copied().collect(),
            intercept: beta[0],
            sigma,
            tail: values[values.len() - order..].to_vec(),
        })
    }

    /// One-step prediction given history (oldest first, at least `ar_order` long).
    pub fn predict_next(&self, history: &[f64]) -> f64 {
        let n = history.len();
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, c)| c * history[n - 1 - j])
                .sum::<f64>()
    }

    /// Recursive multi-step forecast continuing `history`.
    pub fn forecast_from(&self, history: &[f64], horizon: usize) -> Vec<f64> {
        let mut buf: Vec<f64> = history[history.len() - self.ar_order..].to_vec();
        (0..horizon)
            .map(|_| {
                let next = self.predict_next(&buf);
                buf.push(next);
                next
            })
            .collect()
    }

    /// Recursive forecast continuing the training data.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        self.forecast_from(&self.tail, horizon)
    }

    /// Standard error of the `h`-step recursive forecast for `h = 1..=horizon`,
    /// `sigma * sqrt(sum_{j<h} psi_j^2)` with the MA(infinity) weights `psi`.
    pub fn forecast_std_errors(&self, horizon: usize) -> Vec<f64> {
        let mut psi: Vec<f64> = Vec::with_capacity(horizon);
        let mut acc = 0.0;
        (0..horizon)
            .map(|j| {
                let w = if j == 0 {
                    1.0
                } else {
                    (1..=j.min(self.ar_order))
                        .map(|i| self.coefficients[i - 1] * psi[j - i])
                        .sum()
                };
                psi.push(w);
                acc += w * w;
                self.sigma * acc.sqrt()
            })
            .collect()
    }

    /// Per-step exceedance limits for a forecast of `horizon` steps.
    pub fn limits(&self, horizon: usize, sigma_mult: f64, mode: SigmaMode) -> Vec<f64> {
        match mode {
            SigmaMode::Residual => vec![sigma_mult * self.sigma; horizon],
            SigmaMode::Horizon => self
                .forecast_std_errors(horizon)
                .into_iter()
                .map(|s| sigma_mult * s)
                .collect(),
        }
    }
}

/// Which sigma the residual detector compares forecast errors against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// One-step in-sample residual standard deviation at every horizon.
    Residual,
    /// Standard error of the h-step forecast, growing with the horizon.
    #[default]
    Horizon,
}

/// Counts points where `|actual - forecast|` exceeds the per-step limit.
pub fn count_exceedances(model: &ArModel, actual: &[f64], sigma_mult: f64, mode: SigmaMode) -> usize {
    let forecast = model.forecast(actual.len());
    let limits = model.limits(actual.len(), sigma_mult, mode);
    actual
        .iter()
        .zip(&forecast)
        .zip(&limits)
        .filter(|((a, f), l)| (*a - *f).abs() > **l)
        .count()
}
