//! Virtual sensor: a one-hidden-layer MLP (10 ReLU units) that maps the
//! top-1 MI neighbour's stream onto a failed target, trained on the target's
//! pre-fault history and refreshed daily until the device is restored.

use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::{screen, RuleConfig};
use crate::data::{slice_window, Dataset, SensorSeries, WindowSpec};
use crate::error::{Error, Result};
use crate::mi::NeighbourMap;
use crate::rng;
use crate::stats::mae;

pub const HIDDEN_UNITS: usize = 10;
pub const VWC_RANGE: [f64; 2] = [0.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Initial weights and biases are drawn from `[-init_range, init_range]`.
    pub init_range: f64,
    /// Extra lagged neighbour inputs (0 = instantaneous value only).
    pub input_lags: usize,
    /// Minimum fraction of the window where the target must be present.
    pub min_target_coverage: f64,
    /// Training window length, hours, clamped to the accepted range.
    pub window_hours: usize,
    /// Hours of clean physical data needed to deactivate a backup.
    pub restore_hours: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.01,
            momentum: 0.9,
            init_range: 0.5,
            input_lags: 0,
            min_target_coverage: 0.8,
            window_hours: 900,
            restore_hours: 24,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("mlp needs epochs > 0, learning_rate > 0, momentum in [0, 1)".into()));
        }
        if !(self.min_target_coverage > 0.0 && self.min_target_coverage <= 1.0) || self.restore_hours == 0 {
            return Err(Error::Config("mlp coverage must be in (0, 1] and restore_hours > 0".into()));
        }
        Ok(())
    }
}

/// Min-max scaling of the input and output to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub in_min: f64,
    pub in_max: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl ScalerParams {
    fn fit(inputs: &[f64], outputs: &[f64]) -> Result<Self> {
        let (in_min, in_max) = min_max(inputs);
        let (out_min, out_max) = min_max(outputs);
        if !(in_max > in_min) {
            return Err(Error::Degenerate("neighbour is constant over the training window".into()));
        }
        if !(out_max > out_min) {
            return Err(Error::Degenerate("target is constant over the training window".into()));
        }
        Ok(Self { in_min, in_max, out_min, out_max })
    }

    fn scale_in(&self, x: f64) -> f64 {
        (x - self.in_min) / (self.in_max - self.in_min)
    }

    fn scale_out(&self, y: f64) -> f64 {
        (y - self.out_min) / (self.out_max - self.out_min)
    }

    fn unscale_out(&self, y: f64) -> f64 {
        self.out_min + y * (self.out_max - self.out_min)
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpBackup {
    pub target_id: String,
    pub neighbour_id: String,
    /// `HIDDEN_UNITS` rows of `1 + input_lags` input weights.
    pub weights_in: Vec<Vec<f64>>,
    pub bias_in: Vec<f64>,
    pub weights_out: Vec<f64>,
    pub bias_out: f64,
    pub scaler: ScalerParams,
    pub trained_on: WindowSpec,
    pub input_lags: usize,
    /// In-sample MAE on the training pairs, VWC %.
    pub training_mae: f64,
}

impl MlpBackup {
    fn forward_scaled(&self, inputs: &[f64]) -> f64 {
        self.bias_out
            + self
                .weights_in
                .iter()
                .zip(&self.bias_in)
                .zip(&self.weights_out)
                .map(|((w, b), v)| {
                    let pre = b + w.iter().zip(inputs).map(|(wi, xi)| wi * xi).sum::<f64>();
                    v * pre.max(0.0)
                })
                .sum::<f64>()
    }

    /// Prediction from neighbour values, most recent first (`1 + input_lags`
    /// of them). Missing inputs give a missing output; outputs are clamped
    /// to the physical VWC range.
    pub fn predict_lagged(&self, neighbour_recent_first: &[Option<f64>]) -> Option<f64> {
        if neighbour_recent_first.len() < 1 + self.input_lags {
            return None;
        }
        let inputs: Option<Vec<f64>> = neighbour_recent_first[..=self.input_lags]
            .iter()
            .map(|v| v.map(|x| self.scaler.scale_in(x)))
            .collect();
        let y = self.scaler.unscale_out(self.forward_scaled(&inputs?));
        Some(y.clamp(VWC_RANGE[0], VWC_RANGE[1]))
    }

    /// Virtual values for `slots` of the neighbour series.
    pub fn predict_series(&self, neighbour: &SensorSeries, slots: std::ops::Range<usize>) -> Vec<Option<f64>> {
        slots
            .map(|t| {
                if t < self.input_lags {
                    return None;
                }
                let recent: Vec<Option<f64>> = (0..=self.input_lags).map(|l| neighbour.value(t - l)).collect();
                self.predict_lagged(&recent)
            })
            .collect()
    }
}

/// Single-value prediction for the default (no lag) backup.
pub fn predict_backup(model: &MlpBackup, neighbour_value: Option<f64>) -> Option<f64> {
    let mut inputs = vec![neighbour_value];
    inputs.resize(1 + model.input_lags, neighbour_value);
    model.predict_lagged(&inputs)
}

/// Trains the backup on the pairs inside `window` where both streams are
/// present, by full-batch gradient descent with momentum on MSE.
pub fn train_backup(
    neighbour: &SensorSeries,
    target: &SensorSeries,
    window: WindowSpec,
    config: &MlpConfig,
    seed: u64,
) -> Result<MlpBackup> {
    config.validate()?;
    if neighbour.sensor_id() == target.sensor_id() {
        return Err(Error::Config("a sensor cannot back itself up".into()));
    }
    if neighbour.grid() != target.grid() {
        return Err(Error::InvalidGrid("neighbour and target grids differ".into()));
    }
    let t_win = slice_window(target, window)?;
    let coverage = 1.0 - t_win.missing_fraction();
    if coverage < config.min_target_coverage {
        return Err(Error::InsufficientData(format!(
            "target {} present on {:.0}% of the window, need {:.0}%",
            target.sensor_id(),
            coverage * 100.0,
            config.min_target_coverage * 100.0
        )));
    }

    let lags = config.input_lags;
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut outputs: Vec<f64> = Vec::new();
    for t in window.start_slot().max(lags)..window.end_slot {
        let Some(y) = target.value(t) else { continue };
        let x: Option<Vec<f64>> = (0..=lags).map(|l| neighbour.value(t - l)).collect();
        if let Some(x) = x {
            inputs.push(x);
            outputs.push(y);
        }
    }
    if outputs.len() < 24 {
        return Err(Error::InsufficientData(format!(
            "only {} joint training pairs",
            outputs.len()
        )));
    }
    let flat_in: Vec<f64> = inputs.iter().map(|x| x[0]).collect();
    let scaler = ScalerParams::fit(&flat_in, &outputs)?;
    let xs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| x.iter().map(|v| scaler.scale_in(*v)).collect())
        .collect();
    let ys: Vec<f64> = outputs.iter().map(|y| scaler.scale_out(*y)).collect();

    let n_in = 1 + lags;
    let mut rng = rng::stream(seed, &[rng::STREAM_MLP, target.sensor_id(), neighbour.sensor_id()]);
    let r = config.init_range;
    let mut draw = || if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    let mut w_in: Vec<Vec<f64>> = (0..HIDDEN_UNITS).map(|_| (0..n_in).map(|_| draw()).collect()).collect();
    let mut b_in: Vec<f64> = (0..HIDDEN_UNITS).map(|_| draw()).collect();
    let mut w_out: Vec<f64> = (0..HIDDEN_UNITS).map(|_| draw()).collect();
    let mut b_out = draw();

    let mut v_w_in = vec![vec![0.0; n_in]; HIDDEN_UNITS];
    let mut v_b_in = [0.0; HIDDEN_UNITS];
    let mut v_w_out = [0.0; HIDDEN_UNITS];
    let mut v_b_out = 0.0;

    let n = ys.len() as f64;
    let mut hidden = [0.0; HIDDEN_UNITS];
    for _ in 0..config.epochs {
        let mut g_w_in = vec![vec![0.0; n_in]; HIDDEN_UNITS];
        let mut g_b_in = [0.0; HIDDEN_UNITS];
        let mut g_w_out = [0.0; HIDDEN_UNITS];
        let mut g_b_out = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let mut out = b_out;
            for j in 0..HIDDEN_UNITS {
                let pre = b_in[j] + w_in[j].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
                hidden[j] = pre.max(0.0);
                out += w_out[j] * hidden[j];
            }
            let g = 2.0 * (out - y) / n;
            g_b_out += g;
            for j in 0..HIDDEN_UNITS {
                g_w_out[j] += g * hidden[j];
                if hidden[j] > 0.0 {
                    let gh = g * w_out[j];
                    g_b_in[j] += gh;
                    for (gw, xi) in g_w_in[j].iter_mut().zip(x) {
                        *gw += gh * xi;
                    }
                }
            }
        }
        let (lr, mu) = (config.learning_rate, config.momentum);
        for j in 0..HIDDEN_UNITS {
            for k in 0..n_in {
                v_w_in[j][k] = mu * v_w_in[j][k] - lr * g_w_in[j][k];
                w_in[j][k] += v_w_in[j][k];
            }
            v_b_in[j] = mu * v_b_in[j] - lr * g_b_in[j];
            b_in[j] += v_b_in[j];
            v_w_out[j] = mu * v_w_out[j] - lr * g_w_out[j];
            w_out[j] += v_w_out[j];
        }
        v_b_out = mu * v_b_out - lr * g_b_out;
        b_out += v_b_out;
    }

    let mut model = MlpBackup {
        target_id: target.sensor_id().to_string(),
        neighbour_id: neighbour.sensor_id().to_string(),
        weights_in: w_in,
        bias_in: b_in,
        weights_out: w_out,
        bias_out: b_out,
        scaler,
        trained_on: window,
        input_lags: lags,
        training_mae: 0.0,
    };
    if model
        .weights_in
        .iter()
        .flatten()
        .chain(&model.bias_in)
        .chain(&model.weights_out)
        .any(|w| !w.is_finite())
        || !model.bias_out.is_finite()
    {
        return Err(Error::Degenerate("mlp training diverged".into()));
    }
    let fitted: Vec<f64> = xs
        .iter()
        .map(|x| model.scaler.unscale_out(model.forward_scaled(x)).clamp(VWC_RANGE[0], VWC_RANGE[1]))
        .collect();
    model.training_mae = mae(&fitted, &outputs);
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VirtualEventKind {
    Activated,
    Refreshed,
    Deactivated,
    /// No physical neighbour can back the target; escalated to operators.
    Unbacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualEvent {
    #[serde(with = "crate::serde_ts")]
    pub timestamp: NaiveDateTime,
    pub target_id: String,
    pub neighbour_id: Option<String>,
    pub event: VirtualEventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSensorState {
    pub target_id: String,
    pub neighbour_id: Option<String>,
    pub active: bool,
    /// First slot served by the virtual stream (the fault onset).
    pub activated_at: usize,
    pub last_refresh: usize,
    pub unbacked: bool,
    pub model: Option<MlpBackup>,
}

impl VirtualSensorState {
    /// Virtual values from activation up to `end_slot`; empty when inactive.
    pub fn fill(&self, dataset: &Dataset, end_slot: usize) -> Result<Vec<Option<f64>>> {
        match (&self.model, &self.neighbour_id) {
            (Some(model), Some(nb)) if self.active && end_slot > self.activated_at => {
                Ok(model.predict_series(dataset.get(nb)?, self.activated_at..end_slot))
            }
            _ => Ok(Vec::new()),
        }
    }
}

fn event(
    dataset: &Dataset,
    slot: usize,
    target: &str,
    neighbour: Option<&str>,
    kind: VirtualEventKind,
    detail: impl Into<String>,
) -> VirtualEvent {
    VirtualEvent {
        timestamp: dataset.grid().slot_time(slot),
        target_id: target.to_string(),
        neighbour_id: neighbour.map(String::from),
        event: kind,
        detail: detail.into(),
    }
}

/// Activates a backup for `target_id` starting at `fault_slot`. The backup is
/// driven by the top-1 neighbour, which must itself be a healthy physical
/// sensor; otherwise the target is left unbacked.
pub fn activate(
    target_id: &str,
    neighbours: &NeighbourMap,
    dataset: &Dataset,
    fault_slot: usize,
    faulty: &BTreeSet<String>,
    config: &MlpConfig,
    seed: u64,
) -> Result<(VirtualSensorState, VirtualEvent)> {
    let target = dataset.get(target_id)?;
    let mut state = VirtualSensorState {
        target_id: target_id.to_string(),
        neighbour_id: neighbours.neighbour_of(target_id).map(String::from),
        active: false,
        activated_at: fault_slot,
        last_refresh: fault_slot,
        unbacked: true,
        model: None,
    };
    let unbacked = |state: VirtualSensorState, why: String| {
        let ev = event(dataset, fault_slot, target_id, state.neighbour_id.as_deref(), VirtualEventKind::Unbacked, why);
        Ok((state, ev))
    };
    let Some(nb_id) = state.neighbour_id.clone() else {
        return unbacked(state, "no MI neighbour available".into());
    };
    if faulty.contains(&nb_id) {
        return unbacked(state, format!("neighbour {nb_id} is itself faulty"));
    }
    let window = match WindowSpec::trailing(config.window_hours, fault_slot) {
        Ok(w) => w,
        Err(e) => return unbacked(state, format!("no pre-fault training window: {e}")),
    };
    match train_backup(dataset.get(&nb_id)?, target, window, config, seed) {
        Ok(model) => {
            let detail = format!(
                "trained on {} h ending {}, training MAE {:.3}",
                window.length_hours,
                crate::io::format_timestamp(dataset.grid().slot_time(window.end_slot.saturating_sub(1))),
                model.training_mae
            );
            state.model = Some(model);
            state.active = true;
            state.unbacked = false;
            let ev = event(dataset, fault_slot, target_id, Some(&nb_id), VirtualEventKind::Activated, detail);
            Ok((state, ev))
        }
        Err(e) => unbacked(state, format!("backup training failed: {e}")),
    }
}

/// Daily refresh of an active backup at `day_slot` (exclusive end of the
/// data now available).
///
/// The target is restored when its last `restore_hours` are fully present
/// and pass the rule screen. A neighbour that now fails the rule screen
/// leaves the target unbacked; backups are never chained. Otherwise the
/// model is retrained on the pre-fault window with a day-specific seed.
pub fn refresh_daily(
    state: &VirtualSensorState,
    dataset: &Dataset,
    day_slot: usize,
    rules: &RuleConfig,
    config: &MlpConfig,
    seed: u64,
) -> Result<(VirtualSensorState, VirtualEvent)> {
    if !state.active {
        return Err(Error::Config(format!("backup for {} is not active", state.target_id)));
    }
    let nb_id = state.neighbour_id.clone().expect("active backup has a neighbour");
    let target = dataset.get(&state.target_id)?;
    let mut next = state.clone();
    next.last_refresh = day_slot;

    if day_slot >= config.restore_hours.max(rules.spike_median_window_hours) {
        let span = config.restore_hours.max(rules.spike_median_window_hours);
        let g = target.grid().sub_grid(day_slot - span, span)?;
        let tail = SensorSeries::new(target.sensor_id(), g, target.values()[day_slot - span..day_slot].to_vec())?;
        if tail.n_missing() == 0 && screen(&tail, rules)?.passes() {
            next.active = false;
            next.model = None;
            let ev = event(dataset, day_slot, &state.target_id, Some(&nb_id), VirtualEventKind::Deactivated,
                format!("{span} h of clean physical data"));
            return Ok((next, ev));
        }
    }

    let neighbour = dataset.get(&nb_id)?;
    let nb_window = WindowSpec::trailing(config.window_hours, day_slot)?;
    let nb_verdict = screen(&slice_window(neighbour, nb_window)?, rules)?;
    if nb_verdict.is_faulty() {
        next.active = false;
        next.unbacked = true;
        next.model = None;
        let fired: Vec<String> = nb_verdict.fired_rules.iter().map(|k| format!("{k:?}")).collect();
        let ev = event(dataset, day_slot, &state.target_id, Some(&nb_id), VirtualEventKind::Unbacked,
            format!("neighbour {nb_id} failed screening ({}); escalated", fired.join(",")));
        return Ok((next, ev));
    }

    let window = state
        .model
        .as_ref()
        .map(|m| m.trained_on)
        .map_or_else(|| WindowSpec::trailing(config.window_hours, state.activated_at), Ok)?;
    let day_seed = rng::derive_seed(seed, &["refresh", &day_slot.to_string()]);
    let model = train_backup(neighbour, target, window, config, day_seed)?;
    let detail = format!("retrained, training MAE {:.3}", model.training_mae);
    next.model = Some(model);
    let ev = event(dataset, day_slot, &state.target_id, Some(&nb_id), VirtualEventKind::Refreshed, detail);
    Ok((next, ev))
}

/// Outcome of hiding a target over an outage window and backing it up.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackupSimulation {
    pub target_id: String,
    pub neighbour_id: String,
    pub outage_start: usize,
    pub outage_hours: usize,
    pub trained_on: Option<WindowSpec>,
    /// Per outage slot: neighbour, true target, backup and persistence values.
    pub neighbour: Vec<Option<f64>>,
    pub truth: Vec<Option<f64>>,
    pub backup: Vec<Option<f64>>,
    pub persistence: Vec<Option<f64>>,
    pub backup_mae: Option<f64>,
    pub persistence_mae: Option<f64>,
}

fn paired_mae(pred: &[Option<f64>], truth: &[Option<f64>]) -> Option<f64> {
    let errs: Vec<f64> = pred
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| Some(((*p)? - (*t)?).abs()))
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Trains on the history before `outage_start` and compares the backup with
/// last-observation persistence over the outage.
pub fn simulate_outage(
    dataset: &Dataset,
    target_id: &str,
    neighbour_id: &str,
    outage_start: usize,
    outage_hours: usize,
    config: &MlpConfig,
    seed: u64,
) -> Result<BackupSimulation> {
    if target_id == neighbour_id {
        return Err(Error::Config("a sensor cannot back itself up".into()));
    }
    let target = dataset.get(target_id)?;
    let neighbour = dataset.get(neighbour_id)?;
    let end = outage_start + outage_hours;
    if end > dataset.n_slots() {
        return Err(Error::InvalidWindow(format!(
            "outage [{outage_start}, {end}) exceeds the {} slot dataset",
            dataset.n_slots()
        )));
    }
    let mut sim = BackupSimulation {
        target_id: target_id.into(),
        neighbour_id: neighbour_id.into(),
        outage_start,
        outage_hours,
        trained_on: None,
        neighbour: neighbour.values()[outage_start..end].to_vec(),
        truth: target.values()[outage_start..end].to_vec(),
        backup: Vec::new(),
        persistence: Vec::new(),
        backup_mae: None,
        persistence_mae: None,
    };
    if outage_hours == 0 {
        return Ok(sim);
    }
    let window = WindowSpec::trailing(config.window_hours, outage_start)?;
    let model = train_backup(neighbour, target, window, config, seed)?;
    sim.trained_on = Some(window);
    sim.backup = model.predict_series(neighbour, outage_start..end);
    let last = target.values()[..outage_start].iter().rev().find_map(|v| *v);
    sim.persistence = vec![last; outage_hours];
    sim.backup_mae = paired_mae(&sim.backup, &sim.truth);
    sim.persistence_mae = paired_mae(&sim.persistence, &sim.truth);
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_start;
    use crate::data::TimeGrid;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(corpus_start(), n).unwrap()
    }

    /// Slowly varying neighbour in the 15-35 % band.
    fn neighbour_values(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                25.0 + 6.0 * (t / 97.0).sin() + 2.5 * (2.0 * std::f64::consts::PI * t / 24.0).sin()
            })
            .collect()
    }

    fn pair(map: impl Fn(f64) -> f64) -> (SensorSeries, SensorSeries) {
        let nb = neighbour_values(700);
        let tg: Vec<f64> = nb.iter().map(|&x| map(x)).collect();
        (
            SensorSeries::from_dense("N", grid(700), &nb).unwrap(),
            SensorSeries::from_dense("T", grid(700), &tg).unwrap(),
        )
    }

    fn held_out_mae(model: &MlpBackup, nb: &SensorSeries, tg: &SensorSeries) -> f64 {
        let pred = model.predict_series(nb, 600..700);
        paired_mae(&pred, &tg.values()[600..700]).unwrap()
    }

    #[test]
    fn identity_map_is_learned() {
        let (nb, tg) = pair(|x| x);
        let model = train_backup(&nb, &tg, WindowSpec::new(600, 600).unwrap(), &MlpConfig::default(), 1).unwrap();
        assert_eq!(model.weights_in.len(), HIDDEN_UNITS);
        let err = held_out_mae(&model, &nb, &tg);
        assert!(err < 0.1, "held-out MAE {err}");
        let p = predict_backup(&model, Some(22.4)).unwrap();
        assert!((p - 22.4).abs() < 0.5, "{p}");
    }

    #[test]
    fn affine_map_is_learned() {
        let (nb, tg) = pair(|x| 0.5 * x + 3.0);
        let (nb2, tg2) = pair(|x| 2.0 * x + 3.0);
        for (nb, tg) in [(nb, tg), (nb2, tg2)] {
            let model = train_backup(&nb, &tg, WindowSpec::new(600, 600).unwrap(), &MlpConfig::default(), 2).unwrap();
            let err = held_out_mae(&model, &nb, &tg);
            assert!(err < 0.2, "held-out MAE {err}");
        }
    }

    #[test]
    fn constant_neighbour_rejected() {
        let nb = SensorSeries::from_dense("N", grid(400), &[20.0; 400]).unwrap();
        let tg = SensorSeries::from_dense("T", grid(400), &neighbour_values(400)).unwrap();
        assert!(matches!(
            train_backup(&nb, &tg, WindowSpec::new(300, 300).unwrap(), &MlpConfig::default(), 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn sparse_target_rejected() {
        let (nb, tg) = pair(|x| x);
        let holes: Vec<Option<f64>> = tg.values().iter().enumerate().map(|(i, v)| if i % 4 == 0 { None } else { *v }).collect();
        let tg = tg.with_values(holes).unwrap();
        assert!(matches!(
            train_backup(&nb, &tg, WindowSpec::new(600, 600).unwrap(), &MlpConfig::default(), 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn predictions_are_clamped_and_missing_propagates() {
        let (nb, tg) = pair(|x| 2.0 * x + 3.0);
        let model = train_backup(&nb, &tg, WindowSpec::new(600, 600).unwrap(), &MlpConfig { epochs: 200, ..Default::default() }, 3).unwrap();
        for x in [-1e6, -50.0, 0.0, 500.0, 1e6] {
            let y = predict_backup(&model, Some(x)).unwrap();
            assert!((0.0..=100.0).contains(&y), "{x} -> {y}");
        }
        assert_eq!(predict_backup(&model, None), None);
    }

    #[test]
    fn training_is_deterministic() {
        let (nb, tg) = pair(|x| x + 1.0);
        let cfg = MlpConfig { epochs: 300, ..Default::default() };
        let w = WindowSpec::new(500, 600).unwrap();
        let a = train_backup(&nb, &tg, w, &cfg, 5).unwrap();
        let b = train_backup(&nb, &tg, w, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, train_backup(&nb, &tg, w, &cfg, 6).unwrap());
    }

    #[test]
    fn lagged_variant_trains() {
        let (nb, tg) = pair(|x| x);
        let cfg = MlpConfig { input_lags: 2, ..Default::default() };
        let model = train_backup(&nb, &tg, WindowSpec::new(600, 600).unwrap(), &cfg, 1).unwrap();
        assert_eq!(model.weights_in[0].len(), 3);
        assert!(held_out_mae(&model, &nb, &tg) < 0.3);
    }

    fn three_sensor_dataset(target_gap_from: Option<usize>) -> Dataset {
        let n = 700;
        let nb = neighbour_values(n);
        let tg: Vec<Option<f64>> = nb
            .iter()
            .enumerate()
            .map(|(i, &x)| if target_gap_from.is_some_and(|g| i >= g) { None } else { Some(x - 2.0) })
            .collect();
        let other: Vec<f64> = (0..n).map(|i| 30.0 + 3.0 * (i as f64 / 50.0).cos()).collect();
        Dataset::from_series(vec![
            SensorSeries::from_dense("N", grid(n), &nb).unwrap(),
            SensorSeries::new("T", grid(n), tg).unwrap(),
            SensorSeries::from_dense("O", grid(n), &other).unwrap(),
        ])
        .unwrap()
    }

    fn neighbours() -> NeighbourMap {
        let mut m = NeighbourMap::default();
        m.backups.insert("T".into(), crate::mi::Backup { neighbour: "N".into(), mi: 1.0 });
        m.backups.insert("N".into(), crate::mi::Backup { neighbour: "T".into(), mi: 1.0 });
        m
    }

    fn quick() -> MlpConfig {
        MlpConfig { epochs: 300, window_hours: 400, ..Default::default() }
    }

    #[test]
    fn activation_refresh_and_restoration() {
        let ds = three_sensor_dataset(Some(500));
        let (state, ev) = activate("T", &neighbours(), &ds, 500, &BTreeSet::new(), &quick(), 1).unwrap();
        assert_eq!(ev.event, VirtualEventKind::Activated);
        assert!(state.active);
        assert_eq!(state.model.as_ref().unwrap().trained_on, WindowSpec::new(400, 500).unwrap());
        let fill = state.fill(&ds, 600).unwrap();
        assert_eq!(fill.len(), 100);
        assert!(fill.iter().all(|v| v.is_some_and(|x| (0.0..=100.0).contains(&x))));

        // still broken: normal refresh advances by a day
        let (next, ev) = refresh_daily(&state, &ds, 524, &RuleConfig::default(), &quick(), 1).unwrap();
        assert_eq!(ev.event, VirtualEventKind::Refreshed);
        assert!(next.active);
        assert_eq!(next.last_refresh, state.last_refresh + 24);

        // restored: clean data again
        let healthy = three_sensor_dataset(None);
        let (done, ev) = refresh_daily(&next, &healthy, 548, &RuleConfig::default(), &quick(), 1).unwrap();
        assert_eq!(ev.event, VirtualEventKind::Deactivated);
        assert!(!done.active);
    }

    #[test]
    fn faulty_neighbour_is_never_chained() {
        let ds = three_sensor_dataset(Some(500));
        let faulty = BTreeSet::from(["N".to_string()]);
        let (state, ev) = activate("T", &neighbours(), &ds, 500, &faulty, &quick(), 1).unwrap();
        assert_eq!(ev.event, VirtualEventKind::Unbacked);
        assert!(!state.active && state.unbacked);

        // neighbour breaks during the backup
        let (state, _) = activate("T", &neighbours(), &ds, 500, &BTreeSet::new(), &quick(), 1).unwrap();
        let mut broken = ds.clone();
        let n = broken.get("N").unwrap().clone();
        let vals: Vec<Option<f64>> = n.values().iter().enumerate().map(|(i, v)| if (420..520).contains(&i) { None } else { *v }).collect();
        broken.replace(n.with_values(vals).unwrap()).unwrap();
        let (next, ev) = refresh_daily(&state, &broken, 524, &RuleConfig::default(), &quick(), 1).unwrap();
        assert_eq!(ev.event, VirtualEventKind::Unbacked);
        assert!(next.unbacked && !next.active && next.model.is_none());
    }

    #[test]
    fn outage_simulation_contracts() {
        let ds = three_sensor_dataset(None);
        let sim = simulate_outage(&ds, "T", "N", 500, 0, &quick(), 0).unwrap();
        assert!(sim.backup_mae.is_none() && sim.persistence_mae.is_none());
        assert!(simulate_outage(&ds, "T", "T", 500, 10, &quick(), 0).is_err());
        assert!(simulate_outage(&ds, "T", "N", 650, 100, &quick(), 0).is_err());

        let sim = simulate_outage(&ds, "T", "N", 500, 150, &quick(), 0).unwrap();
        assert!(sim.backup_mae.unwrap() <= sim.persistence_mae.unwrap());
    }
}
