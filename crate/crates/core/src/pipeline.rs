//! The daily run: ingest, screen, virtual sensors, forecasts, deficits, rain
//! credit, minutes, sequencing, write. Each day reads the previous day's
//! virtual-sensor state and never its own, so re-running a day reproduces
//! its outputs byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{screen_with_models, FaultKind, FaultVerdict};
use crate::config::{ForecastModel, PipelineConfig};
use crate::data::{slice_window, Dataset, WindowSpec};
use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::io::{self, format_timestamp, write_atomic, ForecastRow, IngestSummary};
use crate::mi::{mi_matrix, top1_neighbours, NeighbourMap};
use crate::rng::derive_seed;
use crate::schedule::{
    compute_deficit, minutes_from_deficit, rain_credit, sequence_zones, Overflow, Proposal, ProposalStatus, ZonesFile,
};
use crate::virtual_sensor::{activate, refresh_daily, VirtualEvent, VirtualSensorState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Screen,
    Virtual,
    Forecast,
    Deficits,
    RainCredit,
    Minutes,
    Sequence,
    Write,
}

impl Stage {
    /// Execution order of a daily run.
    pub const ORDER: [Stage; 9] = [
        Stage::Ingest,
        Stage::Screen,
        Stage::Virtual,
        Stage::Forecast,
        Stage::Deficits,
        Stage::RainCredit,
        Stage::Minutes,
        Stage::Sequence,
        Stage::Write,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Screen => "screen",
            Stage::Virtual => "virtual",
            Stage::Forecast => "forecast",
            Stage::Deficits => "deficits",
            Stage::RainCredit => "rain_credit",
            Stage::Minutes => "minutes",
            Stage::Sequence => "sequence",
            Stage::Write => "write",
        }
    }

    /// Process exit code when this stage fails outright.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Ingest => 3,
            Stage::Screen => 4,
            Stage::Virtual => 5,
            Stage::Forecast => 6,
            Stage::Deficits | Stage::RainCredit | Stage::Minutes | Stage::Sequence => 7,
            Stage::Write => 8,
        }
    }
}

/// Exit code for a run that wrote its outputs with some per-sensor or
/// per-zone failures.
pub const EXIT_PARTIAL: i32 = 9;

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Carried from one day to the next.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyState {
    pub date: Option<NaiveDate>,
    pub virtual_sensors: BTreeMap<String, VirtualSensorState>,
    /// Last proposed runtime per zone, the fallback when a zone has no data.
    pub last_runtimes: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum FaultLogEntry {
    Verdict(FaultVerdict),
    Virtual(VirtualEvent),
    Failure { stage: Stage, subject: String, message: String },
    /// Model-detector alarms shared by most of a zone, read as a real
    /// moisture event (rain, irrigation) rather than sensor faults.
    CommonMode { zone_id: String, sensors: Vec<String> },
}

fn model_only(v: &FaultVerdict) -> bool {
    v.is_faulty() && v.fired_rules.iter().all(|k| matches!(k, FaultKind::IForest | FaultKind::Arima))
}

/// Zones where at least two members, and more than half of them, raised
/// only model-detector alarms. Rule violations are never suppressed.
fn common_mode_events(verdicts: &[FaultVerdict], zones: &ZonesFile) -> BTreeMap<String, Vec<String>> {
    let alarmed: BTreeSet<&str> = verdicts.iter().filter(|v| model_only(v)).map(|v| v.sensor_id.as_str()).collect();
    let screened: BTreeSet<&str> = verdicts.iter().map(|v| v.sensor_id.as_str()).collect();
    let mut out = BTreeMap::new();
    for zone in &zones.zones {
        let members: Vec<&String> = zone.members.iter().filter(|m| screened.contains(m.as_str())).collect();
        let hit: Vec<String> = members.iter().filter(|m| alarmed.contains(m.as_str())).map(|m| m.to_string()).collect();
        if hit.len() >= 2 && 2 * hit.len() > members.len() {
            out.insert(zone.zone_id.clone(), hit);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub date: NaiveDate,
    #[serde(with = "crate::serde_ts")]
    pub run_time: NaiveDateTime,
    pub seed: u64,
    pub config_hash: String,
    pub forecast_model: ForecastModel,
    pub partial: bool,
    pub stages: Vec<StageRecord>,
    pub ingest: Option<IngestSummary>,
    pub faulty: Vec<String>,
    pub virtual_active: Vec<String>,
    pub unbacked: Vec<String>,
    pub detector_skips: BTreeMap<String, Vec<String>>,
    pub precip_mm: f64,
    pub overflow: Vec<Overflow>,
}

pub struct RunInputs {
    pub dataset: Dataset,
    pub ingest: Option<IngestSummary>,
    pub zones: ZonesFile,
    pub precip: BTreeMap<NaiveDate, f64>,
    pub previous: DailyState,
}

/// Everything a daily run produces, in memory.
pub struct DailyRun {
    pub report: RunReport,
    pub proposals: Vec<Proposal>,
    pub faults: Vec<FaultLogEntry>,
    pub forecasts: Vec<ForecastRow>,
    pub effective: Dataset,
    pub provenance: BTreeMap<usize, BTreeSet<String>>,
    pub state: DailyState,
}

pub fn run_time(config: &PipelineConfig, day: NaiveDate) -> NaiveDateTime {
    day.and_time(NaiveTime::from_hms_opt(config.schedule.run_hour, 0, 0).expect("validated run hour"))
}

pub fn state_path(out_dir: &Path, day: NaiveDate) -> PathBuf {
    out_dir.join("state").join(format!("{day}.json"))
}

pub fn day_dir(out_dir: &Path, day: NaiveDate) -> PathBuf {
    out_dir.join(day.to_string())
}

/// Loads the dataset, zones, precipitation and the previous day's state.
pub fn load_inputs(config: &PipelineConfig, day: NaiveDate) -> std::result::Result<RunInputs, StageError> {
    config.validate().at(Stage::Config)?;
    config.check_paths(true).at(Stage::Config)?;
    let zones = ZonesFile::load(&config.paths.zones).at(Stage::Config)?;
    let (dataset, ingest) = io::load_dataset(&config.paths.dataset).at(Stage::Ingest)?;
    let precip = match &config.paths.precip {
        Some(p) => io::read_precip_csv(p).at(Stage::Ingest)?,
        None => BTreeMap::new(),
    };
    let prev_path = state_path(&config.paths.out_dir, day - Duration::days(1));
    let previous = if prev_path.is_file() {
        let bytes = std::fs::read(&prev_path).map_err(|e| Error::io(&prev_path, e)).at(Stage::Ingest)?;
        serde_json::from_slice(&bytes).map_err(Error::from).at(Stage::Ingest)?
    } else {
        DailyState::default()
    };
    Ok(RunInputs {
        dataset,
        ingest: Some(ingest),
        zones,
        precip,
        previous,
    })
}

/// Runs one day in memory.
pub fn run_day(
    inputs: RunInputs,
    config: &PipelineConfig,
    day: NaiveDate,
) -> std::result::Result<DailyRun, StageError> {
    let seed = config.seed;
    let now_time = run_time(config, day);
    let mut stages = Vec::new();
    let mut faults = Vec::new();
    let mut partial = false;

    // ingest: only data before the run hour is visible
    let grid = inputs.dataset.grid();
    let now = grid
        .boundary_of(now_time)
        .ok_or_else(|| Error::InvalidWindow(format!("{now_time} is outside the dataset")))
        .at(Stage::Ingest)?;
    let window_hours = config.schedule.screen_window_hours;
    if now < window_hours {
        return Err(StageError {
            stage: Stage::Ingest,
            source: Error::InsufficientData(format!("{now} h of data before the run, need {window_hours}")),
        });
    }
    let dataset = inputs.dataset.truncate(now).at(Stage::Ingest)?;
    stages.push(StageRecord {
        stage: Stage::Ingest,
        detail: format!("{} sensors, {} slots up to {}", dataset.len(), now, format_timestamp(now_time)),
    });

    // screen: rules first, detectors only on rule-clean windows
    let screen_spec = WindowSpec::trailing(window_hours, now).at(Stage::Screen)?;
    let verdicts: Vec<FaultVerdict> = dataset
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| {
            let w = slice_window(s, screen_spec)?;
            screen_with_models(&w, &config.rules, &config.detectors, derive_seed(seed, &["screen", s.sensor_id()]))
        })
        .collect::<Result<_>>()
        .at(Stage::Screen)?;
    let common_mode = if config.schedule.suppress_common_mode {
        common_mode_events(&verdicts, &inputs.zones)
    } else {
        BTreeMap::new()
    };
    let suppressed: BTreeSet<&String> = common_mode.values().flatten().collect();
    let mut faulty = BTreeSet::new();
    let mut fault_slot = BTreeMap::new();
    let mut detector_skips = BTreeMap::new();
    for v in &verdicts {
        if !v.skipped.is_empty() {
            detector_skips.insert(v.sensor_id.clone(), v.skipped.clone());
        }
        if v.is_faulty() && !suppressed.contains(&v.sensor_id) {
            faulty.insert(v.sensor_id.clone());
            let at = v
                .earliest_offending_slot()
                .map(|r| screen_spec.start_slot() + r)
                .unwrap_or(now - 24);
            fault_slot.insert(v.sensor_id.clone(), at);
            faults.push(FaultLogEntry::Verdict(v.clone()));
        }
    }
    for (zone_id, sensors) in &common_mode {
        faults.push(FaultLogEntry::CommonMode {
            zone_id: zone_id.clone(),
            sensors: sensors.clone(),
        });
    }
    stages.push(StageRecord {
        stage: Stage::Screen,
        detail: format!(
            "{} of {} sensors faulty, {} zones with common-mode detector alarms",
            faulty.len(),
            dataset.len(),
            common_mode.len()
        ),
    });

    // virtual sensors: refresh active backups, activate new ones
    let needs_backup = !faulty.is_empty() || inputs.previous.virtual_sensors.values().any(|s| s.active);
    let neighbours = if needs_backup {
        let mi_spec = WindowSpec::trailing(config.schedule.mi_window_hours, now).at(Stage::Virtual)?;
        let mi_data = dataset
            .iter()
            .map(|s| slice_window(s, mi_spec))
            .collect::<Result<Vec<_>>>()
            .and_then(Dataset::from_series);
        let matrix = mi_data.and_then(|d| mi_matrix(&d, &config.ksg, seed)).at(Stage::Virtual)?;
        top1_neighbours(&matrix)
    } else {
        NeighbourMap::default()
    };
    let mut states: BTreeMap<String, VirtualSensorState> = BTreeMap::new();
    for id in dataset.sensor_ids() {
        let prev = inputs.previous.virtual_sensors.get(id).filter(|s| s.active);
        let outcome = match prev {
            Some(state) => refresh_daily(state, &dataset, now, &config.rules, &config.backup, seed),
            None if faulty.contains(id) => {
                activate(id, &neighbours, &dataset, fault_slot[id], &faulty, &config.backup, seed)
            }
            None => continue,
        };
        match outcome {
            Ok((state, event)) => {
                faults.push(FaultLogEntry::Virtual(event));
                states.insert(id.to_string(), state);
            }
            Err(e) => {
                partial = true;
                faults.push(FaultLogEntry::Failure {
                    stage: Stage::Virtual,
                    subject: id.to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let mut effective = dataset.clone();
    let mut provenance: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (id, state) in states.iter().filter(|(_, s)| s.active) {
        let fill = state.fill(&dataset, now).at(Stage::Virtual)?;
        let series = dataset.get(id).at(Stage::Virtual)?;
        let mut values = series.values().to_vec();
        for (k, v) in fill.into_iter().enumerate() {
            if let Some(v) = v {
                let slot = state.activated_at + k;
                values[slot] = Some(v);
                provenance.entry(slot).or_default().insert(id.clone());
            }
        }
        effective.replace(series.with_values(values).at(Stage::Virtual)?).at(Stage::Virtual)?;
    }
    let virtual_active: Vec<String> = states.iter().filter(|(_, s)| s.active).map(|(k, _)| k.clone()).collect();
    let unbacked: Vec<String> = faulty
        .iter()
        .filter(|id| !virtual_active.contains(id))
        .cloned()
        .collect();
    stages.push(StageRecord {
        stage: Stage::Virtual,
        detail: format!("{} active, {} unbacked", virtual_active.len(), unbacked.len()),
    });

    // forecasts for physical-healthy and virtually backed sensors
    let model: &dyn Forecaster = match config.schedule.forecast_model {
        ForecastModel::Knn => &config.knn,
        ForecastModel::Sarima => &config.sarima,
    };
    let horizon = config.knn.horizon_hours;
    let fc_spec = WindowSpec::trailing(config.knn.window_hours, now).at(Stage::Forecast)?;
    let targets: Vec<&str> = effective.sensor_ids().filter(|id| !unbacked.iter().any(|u| u == id)).collect();
    let results: Vec<(String, Result<Vec<f64>>)> = targets
        .par_iter()
        .map(|id| {
            let r = effective
                .get(id)
                .and_then(|s| slice_window(s, fc_spec))
                .and_then(|w| model.forecast(&w, horizon));
            (id.to_string(), r)
        })
        .collect();
    let mut forecasts = BTreeMap::new();
    let mut forecast_rows = Vec::new();
    for (id, r) in results {
        match r {
            Ok(f) => {
                let is_virtual = virtual_active.contains(&id);
                for (h, v) in f.iter().enumerate() {
                    forecast_rows.push(ForecastRow {
                        sensor_id: id.clone(),
                        timestamp: now_time + Duration::hours(h as i64),
                        vwc: *v,
                        is_virtual,
                    });
                }
                forecasts.insert(id, f);
            }
            Err(e) => {
                partial = true;
                faults.push(FaultLogEntry::Failure {
                    stage: Stage::Forecast,
                    subject: id,
                    message: e.to_string(),
                });
            }
        }
    }
    stages.push(StageRecord {
        stage: Stage::Forecast,
        detail: format!("{} sensors forecast {horizon} h with {}", forecasts.len(), model.name()),
    });

    // deficits use each member's minimum over the coming 24 h
    let next_day: BTreeMap<String, Vec<f64>> = forecasts
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().take(24).copied().collect()))
        .collect();
    let deficits: Vec<Option<(f64, f64)>> = inputs.zones.zones.iter().map(|z| compute_deficit(z, &next_day)).collect();
    stages.push(StageRecord {
        stage: Stage::Deficits,
        detail: format!("{} of {} zones with member forecasts", deficits.iter().flatten().count(), deficits.len()),
    });

    let precip_mm = inputs.precip.get(&day).copied().unwrap_or(0.0);
    let net: Vec<Option<f64>> = deficits.iter().map(|d| d.map(|(_, mm)| rain_credit(mm, precip_mm))).collect();
    stages.push(StageRecord {
        stage: Stage::RainCredit,
        detail: format!("{precip_mm} mm forecast"),
    });

    let mut proposals = Vec::new();
    for ((zone, deficit), net) in inputs.zones.zones.iter().zip(&deficits).zip(&net) {
        let mut p = Proposal {
            zone_id: zone.zone_id.clone(),
            date: day,
            main_line: zone.main_line.clone(),
            runtime_minutes: 0,
            requested_minutes: 0,
            window_start: None,
            window_end: None,
            zone_forecast_vwc: None,
            deficit_mm: 0.0,
            rain_credit_mm: 0.0,
            capped: false,
            truncated: false,
            status: ProposalStatus::Proposed,
        };
        match (deficit, net) {
            (Some((vwc, mm)), Some(net)) => {
                let (minutes, capped) = minutes_from_deficit(*net, zone);
                p.zone_forecast_vwc = Some(*vwc);
                p.deficit_mm = *mm;
                p.rain_credit_mm = mm - net;
                p.runtime_minutes = minutes;
                p.capped = capped;
            }
            _ => {
                partial = true;
                let fallback = inputs.previous.last_runtimes.get(&zone.zone_id).copied().unwrap_or(0);
                p.runtime_minutes = fallback.min(zone.max_runtime);
                p.status = ProposalStatus::Skipped("no-data".into());
                faults.push(FaultLogEntry::Failure {
                    stage: Stage::Deficits,
                    subject: zone.zone_id.clone(),
                    message: format!("no member forecasts; fell back to {} min", p.runtime_minutes),
                });
            }
        }
        p.requested_minutes = p.runtime_minutes;
        proposals.push(p);
    }
    stages.push(StageRecord {
        stage: Stage::Minutes,
        detail: format!("{} min requested", proposals.iter().map(|p| p.runtime_minutes).sum::<u32>()),
    });

    let night = config.schedule.night.interval(day);
    let (proposals, overflow) = sequence_zones(proposals, &config.blackouts, night);
    stages.push(StageRecord {
        stage: Stage::Sequence,
        detail: format!(
            "{} windows, {} lines over capacity",
            proposals.iter().filter(|p| p.window_start.is_some()).count(),
            overflow.len()
        ),
    });

    let state = DailyState {
        date: Some(day),
        virtual_sensors: states,
        last_runtimes: proposals.iter().map(|p| (p.zone_id.clone(), p.runtime_minutes)).collect(),
    };
    let report = RunReport {
        date: day,
        run_time: now_time,
        seed,
        config_hash: config.hash(),
        forecast_model: config.schedule.forecast_model,
        partial,
        stages,
        ingest: inputs.ingest,
        faulty: faulty.into_iter().collect(),
        virtual_active,
        unbacked,
        detector_skips,
        precip_mm,
        overflow,
    };
    Ok(DailyRun {
        report,
        proposals,
        faults,
        forecasts: forecast_rows,
        effective,
        provenance,
        state,
    })
}

/// Names of the files written under `<out_dir>/<date>/`.
pub const OUTPUT_FILES: [&str; 6] = [
    "proposals.jsonl",
    "faults.jsonl",
    "forecasts.csv",
    "hourly.csv",
    "stage_trace.txt",
    "run_report.json",
];

pub fn header(report: &RunReport) -> String {
    format!(
        "# date={} run_time={} seed={} config_hash={}\n",
        report.date,
        format_timestamp(report.run_time),
        report.seed,
        report.config_hash
    )
}

/// Writes a run's artifacts and its state file, each atomically.
pub fn write_run(run: &mut DailyRun, out_dir: &Path) -> Result<PathBuf> {
    run.report.stages.push(StageRecord {
        stage: Stage::Write,
        detail: format!("{} files", OUTPUT_FILES.len()),
    });
    let dir = day_dir(out_dir, run.report.date);
    let head = header(&run.report);

    write_atomic(&dir.join("proposals.jsonl"), &io::json_lines(&run.proposals)?)?;
    write_atomic(&dir.join("faults.jsonl"), &io::json_lines(&run.faults)?)?;

    let mut fc = head.clone().into_bytes();
    fc.extend(io::forecast_bytes(&run.forecasts));
    write_atomic(&dir.join("forecasts.csv"), &fc)?;

    let mut hourly = head.clone().into_bytes();
    hourly.extend(io::hourly_matrix_bytes(&run.effective, Some(&run.provenance))?);
    write_atomic(&dir.join("hourly.csv"), &hourly)?;

    let mut trace = head;
    for (i, s) in run.report.stages.iter().enumerate() {
        trace.push_str(&format!("{} {}: {}\n", i + 1, s.stage, s.detail));
    }
    write_atomic(&dir.join("stage_trace.txt"), trace.as_bytes())?;

    let mut report = serde_json::to_vec_pretty(&run.report)?;
    report.push(b'\n');
    write_atomic(&dir.join("run_report.json"), &report)?;

    let mut state = serde_json::to_vec_pretty(&run.state)?;
    state.push(b'\n');
    write_atomic(&state_path(out_dir, run.report.date), &state)?;
    info!("wrote {}", dir.display());
    Ok(dir)
}

/// Loads inputs, runs `day` and writes its artifacts.
pub fn run_daily(config: &PipelineConfig, day: NaiveDate) -> std::result::Result<DailyRun, StageError> {
    let inputs = load_inputs(config, day)?;
    let mut run = run_day(inputs, config, day)?;
    write_run(&mut run, &config.paths.out_dir).at(Stage::Write)?;
    Ok(run)
}
