use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use log::warn;
use serde::Serialize;

use soilcast_core::anomaly::{screen_with_models, FaultVerdict};
use soilcast_core::config::ForecastModel;
use soilcast_core::data::slice_window;
use soilcast_core::forecast::{rolling_origin_evaluate, Forecaster, HORIZON_MAX_HOURS, HORIZON_MIN_HOURS};
use soilcast_core::io::{self, format_timestamp, write_atomic, ForecastRow, IngestSummary};
use soilcast_core::mi::{export_graph, mi_matrix, top1_neighbours};
use soilcast_core::pipeline::{day_dir, run_daily, run_time, Stage, StageError, EXIT_PARTIAL};
use soilcast_core::replay::write_replay;
use soilcast_core::rng::derive_seed;
use soilcast_core::schedule::{commit, propose, sequence_zones, ExecutedRuntime, Proposal, ProposalStatus, ZonesFile};
use soilcast_core::virtual_sensor::simulate_outage;
use soilcast_core::{Dataset, Error, PipelineConfig, WindowSpec};

use crate::{Cli, Command, DateArg};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

type Outcome<T> = Result<T, Failure>;

fn fail(stage: Stage) -> impl Fn(Error) -> Failure {
    move |e| {
        if matches!(e, Error::Config(_)) {
            return usage(e.to_string());
        }
        Failure {
            code: stage.exit_code() as u8,
            message: format!("{stage} stage: {e}"),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure {
            code: e.stage.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: Stage::Config.exit_code() as u8,
        message,
    }
}

/// Defaults, then the config file, then global flags.
fn settings(cli: &Cli) -> Outcome<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(fail(Stage::Config))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    if let Some(ds) = &cli.dataset {
        cfg.paths.dataset = ds.clone();
    }
    if cfg.paths.out_dir.as_os_str().is_empty() {
        cfg.paths.out_dir = PathBuf::from("out");
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(usage(format!("{} configuration problems:\n  {}", problems.len(), problems.join("\n  "))));
    }
    Ok(cfg)
}

/// Comment line embedded at the top of every CSV and text artifact.
fn header(command: &str, cfg: &PipelineConfig) -> String {
    format!("# command={command} seed={} config_hash={}\n", cfg.seed, cfg.hash())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    files: Vec<String>,
}

/// Records which files a command wrote, with the seed and config hash, next
/// to artifacts whose format has no room for a header.
fn write_manifest(cfg: &PipelineConfig, command: &str, files: &[PathBuf]) -> Outcome<()> {
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        files: files.iter().map(|f| f.display().to_string()).collect(),
    };
    let mut body = serde_json::to_vec_pretty(&manifest).map_err(|e| fail(Stage::Write)(e.into()))?;
    body.push(b'\n');
    let path = cfg.paths.out_dir.join(format!("{command}.manifest.json"));
    write_atomic(&path, &body).map_err(fail(Stage::Write))
}

fn write_with_header(path: &Path, head: &str, body: &[u8]) -> Outcome<()> {
    let mut bytes = head.as_bytes().to_vec();
    bytes.extend_from_slice(body);
    write_atomic(path, &bytes).map_err(fail(Stage::Write))
}

fn load(cfg: &PipelineConfig) -> Outcome<(Dataset, IngestSummary)> {
    if cfg.paths.dataset.as_os_str().is_empty() {
        return Err(usage("no dataset: pass --dataset or set paths.dataset".into()));
    }
    io::load_dataset(&cfg.paths.dataset).map_err(fail(Stage::Ingest))
}

/// End slot for a command: the run hour of `date`, or the end of the data.
fn end_slot(cfg: &PipelineConfig, ds: &Dataset, date: &DateArg) -> Outcome<usize> {
    match date.date {
        None => Ok(ds.n_slots()),
        Some(d) => {
            let t = run_time(cfg, d);
            ds.grid()
                .boundary_of(t)
                .ok_or_else(|| usage(format!("{t} is outside the dataset")))
        }
    }
}

pub fn dispatch(cli: &Cli) -> Outcome<u8> {
    let mut cfg = settings(cli)?;
    match &cli.command {
        Command::Synth { dir, corpus_seed } => synth(&cfg, dir, *corpus_seed),
        Command::Ingest { input } => {
            if let Some(p) = input {
                cfg.paths.dataset = p.clone();
            }
            ingest(&cfg)
        }
        Command::Screen(date) => screen(&cfg, date),
        Command::MiGraph(date) => mi_graph(&cfg, date),
        Command::BackupSim {
            target,
            neighbour,
            outage_start,
            outage_hours,
        } => backup_sim(&cfg, target, neighbour.as_deref(), outage_start, *outage_hours),
        Command::Forecast { date, model, horizon } => {
            if let Some(m) = model {
                cfg.schedule.forecast_model = (*m).into();
            }
            forecast(&cfg, date, *horizon)
        }
        Command::Evaluate { models } => {
            let models: Vec<ForecastModel> = models.iter().map(|m| (*m).into()).collect();
            evaluate(&cfg, &models)
        }
        Command::Schedule { date, forecasts } => schedule(&cfg, *date, forecasts.as_deref()),
        Command::RunDaily { date } => daily(&cfg, *date),
        Command::Commit {
            date,
            accept,
            overrides,
            skip,
        } => commit_day(&cfg, *date, *accept, overrides, skip),
    }
}

fn synth(cfg: &PipelineConfig, dir: &Path, corpus_seed: u64) -> Outcome<u8> {
    let written = write_replay(dir, corpus_seed, cfg.seed).map_err(fail(Stage::Write))?;
    println!("replay written to {}", dir.display());
    println!("  dataset {}", written.paths.dataset.display());
    println!("  config  {}", dir.join(soilcast_core::replay::CONFIG_FILE).display());
    Ok(0)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    seed: u64,
    config_hash: String,
    input: String,
    format: &'a str,
    rows_read: usize,
    rejected: Vec<String>,
    n_sensors: usize,
    n_slots: usize,
    slots_filled: usize,
}

fn ingest(cfg: &PipelineConfig) -> Outcome<u8> {
    let (ds, summary) = load(cfg)?;
    let out = cfg.paths.out_dir.join("hourly.csv");
    let body = io::hourly_matrix_bytes(&ds, None).map_err(fail(Stage::Write))?;
    write_with_header(&out, &header("ingest", cfg), &body)?;
    for r in &summary.rejected {
        warn!("line {}: {}", r.line, r.reason);
    }
    let report = IngestReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        input: cfg.paths.dataset.display().to_string(),
        format: summary.format,
        rows_read: summary.rows_read,
        rejected: summary.rejected.iter().map(|r| format!("line {}: {}", r.line, r.reason)).collect(),
        n_sensors: summary.n_sensors,
        n_slots: summary.n_slots,
        slots_filled: summary.slots_filled,
    };
    let report_path = cfg.paths.out_dir.join("ingest_report.json");
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| fail(Stage::Write)(e.into()))?;
    bytes.push(b'\n');
    write_atomic(&report_path, &bytes).map_err(fail(Stage::Write))?;
    println!(
        "{} rows read, {} rejected, {} sensors x {} hourly slots ({} filled)",
        summary.rows_read,
        summary.rejected.len(),
        summary.n_sensors,
        summary.n_slots,
        summary.slots_filled
    );
    println!("wrote {} and {}", out.display(), report_path.display());
    Ok(0)
}

fn screen(cfg: &PipelineConfig, date: &DateArg) -> Outcome<u8> {
    let (ds, _) = load(cfg)?;
    let end = end_slot(cfg, &ds, date)?;
    let spec = WindowSpec::trailing(cfg.schedule.screen_window_hours, end).map_err(fail(Stage::Screen))?;
    let mut verdicts: Vec<FaultVerdict> = Vec::new();
    for s in ds.iter() {
        let w = slice_window(s, spec).map_err(fail(Stage::Screen))?;
        let seed = derive_seed(cfg.seed, &["screen", s.sensor_id()]);
        verdicts.push(screen_with_models(&w, &cfg.rules, &cfg.detectors, seed).map_err(fail(Stage::Screen))?);
    }
    let path = cfg.paths.out_dir.join("screen.jsonl");
    write_atomic(&path, &io::json_lines(&verdicts).map_err(fail(Stage::Write))?).map_err(fail(Stage::Write))?;
    write_manifest(cfg, "screen", std::slice::from_ref(&path))?;
    for v in &verdicts {
        let status = if v.is_faulty() {
            format!("FAULTY {:?}", v.fired_rules)
        } else {
            "ok".to_string()
        };
        println!("{} {status}", v.sensor_id);
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn mi_graph(cfg: &PipelineConfig, date: &DateArg) -> Outcome<u8> {
    let (ds, _) = load(cfg)?;
    let end = end_slot(cfg, &ds, date)?;
    let spec = WindowSpec::trailing(cfg.schedule.mi_window_hours, end).map_err(fail(Stage::Virtual))?;
    let window = ds
        .iter()
        .map(|s| slice_window(s, spec))
        .collect::<soilcast_core::Result<Vec<_>>>()
        .and_then(Dataset::from_series)
        .map_err(fail(Stage::Virtual))?;
    let matrix = mi_matrix(&window, &cfg.ksg, cfg.seed).map_err(fail(Stage::Virtual))?;
    let neighbours = top1_neighbours(&matrix);
    let files = export_graph(&matrix, &neighbours, &cfg.paths.out_dir.join("mi_graph")).map_err(fail(Stage::Write))?;
    write_manifest(cfg, "mi-graph", &[files.dot.clone(), files.json.clone()])?;
    for (id, b) in &neighbours.backups {
        println!("{id} -> {} ({:.3} nats)", b.neighbour, b.mi);
    }
    for id in &neighbours.unbacked {
        println!("{id} -> none");
    }
    println!("wrote {} and {}", files.dot.display(), files.json.display());
    Ok(0)
}

#[derive(Serialize)]
struct BackupReport {
    seed: u64,
    config_hash: String,
    target: String,
    neighbour: String,
    outage_start: String,
    outage_hours: usize,
    backup_mae: Option<f64>,
    persistence_mae: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Hours of observed history written before the cutover marker.
const CONTEXT_HOURS: usize = 168;

fn backup_sim(
    cfg: &PipelineConfig,
    target: &str,
    neighbour: Option<&str>,
    outage_start: &str,
    outage_hours: usize,
) -> Outcome<u8> {
    let (ds, _) = load(cfg)?;
    let start_time =
        io::parse_timestamp(outage_start).ok_or_else(|| usage(format!("cannot parse outage start `{outage_start}`")))?;
    let start = ds
        .grid()
        .slot_of(start_time)
        .ok_or_else(|| usage(format!("{start_time} is outside the dataset")))?;
    if start + outage_hours > ds.n_slots() {
        return Err(usage(format!(
            "outage of {outage_hours} h from {start_time} runs past the end of the dataset"
        )));
    }
    ds.get(target).map_err(|e| usage(e.to_string()))?;
    let neighbour = match neighbour {
        Some(n) => n.to_string(),
        None => {
            let spec = WindowSpec::trailing(cfg.schedule.mi_window_hours.min(start), start)
                .map_err(fail(Stage::Virtual))?;
            let window = ds
                .iter()
                .map(|s| slice_window(s, spec))
                .collect::<soilcast_core::Result<Vec<_>>>()
                .and_then(Dataset::from_series)
                .map_err(fail(Stage::Virtual))?;
            let matrix = mi_matrix(&window, &cfg.ksg, cfg.seed).map_err(fail(Stage::Virtual))?;
            top1_neighbours(&matrix)
                .neighbour_of(target)
                .map(str::to_string)
                .ok_or_else(|| fail(Stage::Virtual)(Error::InsufficientData(format!("{target} has no neighbour"))))?
        }
    };
    let sim = simulate_outage(&ds, target, &neighbour, start, outage_hours, &cfg.backup, cfg.seed)
        .map_err(fail(Stage::Virtual))?;

    let grid = ds.grid();
    let mut csv = format!(
        "{}# cutover={}\ntimestamp,phase,neighbour,truth,backup,persistence\n",
        header("backup-sim", cfg),
        format_timestamp(start_time)
    );
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let (n_series, t_series) = (ds.get(&neighbour).map_err(fail(Stage::Virtual))?, ds.get(target).map_err(fail(Stage::Virtual))?);
    for slot in start.saturating_sub(CONTEXT_HOURS)..start {
        csv.push_str(&format!(
            "{},observed,{},{},,\n",
            format_timestamp(grid.slot_time(slot)),
            cell(n_series.value(slot)),
            cell(t_series.value(slot))
        ));
    }
    for k in 0..outage_hours {
        csv.push_str(&format!(
            "{},outage,{},{},{},{}\n",
            format_timestamp(grid.slot_time(start + k)),
            cell(sim.neighbour[k]),
            cell(sim.truth[k]),
            cell(sim.backup[k]),
            cell(sim.persistence[k])
        ));
    }
    let series_path = cfg.paths.out_dir.join("backup_sim.csv");
    write_atomic(&series_path, csv.as_bytes()).map_err(fail(Stage::Write))?;
    let report = BackupReport {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        target: target.into(),
        neighbour: neighbour.clone(),
        outage_start: format_timestamp(start_time),
        outage_hours,
        backup_mae: sim.backup_mae,
        persistence_mae: sim.persistence_mae,
    };
    let report_path = cfg.paths.out_dir.join("backup_sim.json");
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| fail(Stage::Write)(e.into()))?;
    bytes.push(b'\n');
    write_atomic(&report_path, &bytes).map_err(fail(Stage::Write))?;
    println!(
        "{target} backed by {neighbour} over {outage_hours} h: backup MAE {}, persistence MAE {}",
        fmt_opt(sim.backup_mae),
        fmt_opt(sim.persistence_mae)
    );
    println!("wrote {} and {}", series_path.display(), report_path.display());
    Ok(0)
}

fn model_for(cfg: &PipelineConfig, m: ForecastModel) -> &dyn Forecaster {
    match m {
        ForecastModel::Knn => &cfg.knn,
        ForecastModel::Sarima => &cfg.sarima,
    }
}

fn forecast(cfg: &PipelineConfig, date: &DateArg, horizon: Option<usize>) -> Outcome<u8> {
    let horizon = horizon.unwrap_or(cfg.knn.horizon_hours);
    if !(HORIZON_MIN_HOURS..=HORIZON_MAX_HOURS).contains(&horizon) {
        return Err(usage(format!(
            "horizon must be in [{HORIZON_MIN_HOURS}, {HORIZON_MAX_HOURS}] hours"
        )));
    }
    let (ds, _) = load(cfg)?;
    let end = end_slot(cfg, &ds, date)?;
    let spec = WindowSpec::trailing(cfg.knn.window_hours, end).map_err(fail(Stage::Forecast))?;
    let model = model_for(cfg, cfg.schedule.forecast_model);
    let origin = ds.grid().slot_time(0) + Duration::hours(end as i64);
    let mut rows = Vec::new();
    let mut failed = 0;
    for s in ds.iter() {
        let result = slice_window(s, spec).and_then(|w| model.forecast(&w, horizon));
        match result {
            Ok(f) => rows.extend(f.iter().enumerate().map(|(h, v)| ForecastRow {
                sensor_id: s.sensor_id().to_string(),
                timestamp: origin + Duration::hours(h as i64),
                vwc: *v,
                is_virtual: false,
            })),
            Err(e) => {
                failed += 1;
                warn!("{}: {e}", s.sensor_id());
            }
        }
    }
    if rows.is_empty() {
        return Err(fail(Stage::Forecast)(Error::InsufficientData("no sensor could be forecast".into())));
    }
    let path = cfg.paths.out_dir.join(format!("forecasts_{}.csv", origin.date()));
    write_with_header(&path, &header("forecast", cfg), &io::forecast_bytes(&rows))?;
    println!(
        "{} sensors forecast {horizon} h from {} with {}",
        ds.len() - failed,
        format_timestamp(origin),
        model.name()
    );
    println!("wrote {}", path.display());
    Ok(if failed > 0 { EXIT_PARTIAL as u8 } else { 0 })
}

fn evaluate(cfg: &PipelineConfig, models: &[ForecastModel]) -> Outcome<u8> {
    let (ds, _) = load(cfg)?;
    let mut chosen: Vec<&dyn Forecaster> = Vec::new();
    for m in models {
        let f = model_for(cfg, *m);
        if !chosen.iter().any(|c| c.name() == f.name()) {
            chosen.push(f);
        }
    }
    let report = rolling_origin_evaluate(&ds, &chosen, &cfg.eval).map_err(fail(Stage::Forecast))?;
    let path = cfg.paths.out_dir.join("evaluation.csv");
    write_with_header(&path, &header("evaluate", cfg), report.to_csv().as_bytes())?;
    println!("{} origins, window {} h, horizon {} h", report.origins.len(), cfg.eval.window_hours, cfg.eval.horizon_hours);
    println!("{:<8} {:>10} {:>10} {:>8}", "model", "mean_mae", "p75_mae", "sensors");
    for s in &report.summaries {
        println!("{:<8} {:>10.4} {:>10.4} {:>8}", s.model, s.mean_mae, s.p75_mae, s.n_sensors);
    }
    println!("wrote {}", path.display());
    Ok(0)
}

fn load_zones(cfg: &PipelineConfig) -> Outcome<ZonesFile> {
    if cfg.paths.zones.as_os_str().is_empty() {
        return Err(usage("no zones file: set paths.zones in the config".into()));
    }
    ZonesFile::load(&cfg.paths.zones).map_err(fail(Stage::Config))
}

fn load_precip(cfg: &PipelineConfig) -> Outcome<BTreeMap<NaiveDate, f64>> {
    match &cfg.paths.precip {
        Some(p) => io::read_precip_csv(p).map_err(fail(Stage::Ingest)),
        None => Ok(BTreeMap::new()),
    }
}

fn print_proposals(proposals: &[Proposal]) {
    for p in proposals {
        let window = match (p.window_start, p.window_end) {
            (Some(s), Some(e)) => format!("{} - {}", s.format("%m-%d %H:%M"), e.format("%m-%d %H:%M")),
            _ => "-".into(),
        };
        let flags = [(p.capped, " capped"), (p.truncated, " truncated")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, s)| *s)
            .collect::<String>();
        println!(
            "{:<6} {:<6} {:>4} min  {window:<25} deficit {:>6.2} mm  rain {:>5.2} mm{flags}",
            p.zone_id, p.main_line, p.runtime_minutes, p.deficit_mm, p.rain_credit_mm
        );
    }
}

fn schedule(cfg: &PipelineConfig, date: NaiveDate, forecasts: Option<&Path>) -> Outcome<u8> {
    let zones = load_zones(cfg)?;
    let precip = load_precip(cfg)?;
    let path = forecasts
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.paths.out_dir.join(format!("forecasts_{date}.csv")));
    let forecasts = io::read_forecasts_csv(&path).map_err(fail(Stage::Ingest))?;
    // deficits look at the coming 24 h only
    let next_day: BTreeMap<String, Vec<f64>> = forecasts
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().take(24).collect()))
        .collect();
    let rain = precip.get(&date).copied().unwrap_or(0.0);
    let proposals = zones.zones.iter().map(|z| propose(z, date, &next_day, rain, None)).collect();
    let (proposals, overflow) = sequence_zones(proposals, &cfg.blackouts, cfg.schedule.night.interval(date));
    let out = cfg.paths.out_dir.join(format!("proposals_{date}.jsonl"));
    write_atomic(&out, &io::json_lines(&proposals).map_err(fail(Stage::Write))?).map_err(fail(Stage::Write))?;
    write_manifest(cfg, "schedule", std::slice::from_ref(&out))?;
    print_proposals(&proposals);
    for o in &overflow {
        warn!(
            "line {} over capacity: {} min requested, {} min available, {} min unplaced",
            o.main_line, o.demand_minutes, o.capacity_minutes, o.unplaced_minutes
        );
    }
    println!("wrote {}", out.display());
    let skipped = proposals.iter().any(|p| matches!(p.status, ProposalStatus::Skipped(_)));
    Ok(if skipped { EXIT_PARTIAL as u8 } else { 0 })
}

fn daily(cfg: &PipelineConfig, date: NaiveDate) -> Outcome<u8> {
    let run = run_daily(cfg, date)?;
    let r = &run.report;
    for s in &r.stages {
        println!("{:<12} {}", s.stage.to_string(), s.detail);
    }
    if !r.faulty.is_empty() {
        println!("faulty: {}", r.faulty.join(", "));
    }
    if !r.virtual_active.is_empty() {
        println!("virtual: {}", r.virtual_active.join(", "));
    }
    print_proposals(&run.proposals);
    println!("wrote {}", day_dir(&cfg.paths.out_dir, date).display());
    Ok(if r.partial { EXIT_PARTIAL as u8 } else { 0 })
}

fn read_proposals(path: &Path) -> Outcome<Vec<Proposal>> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(Stage::Ingest)(Error::io(path, e)))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                fail(Stage::Ingest)(Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

/// Executed-runtime log shared by every day; re-committing a day replaces
/// that day's lines.
pub const EXECUTED_LOG: &str = "executed.jsonl";

fn commit_day(cfg: &PipelineConfig, date: NaiveDate, accept: bool, overrides: &[String], skip: &[String]) -> Outcome<u8> {
    let path = day_dir(&cfg.paths.out_dir, date).join("proposals.jsonl");
    let mut proposals = read_proposals(&path)?;
    let known: BTreeSet<String> = proposals.iter().map(|p| p.zone_id.clone()).collect();
    let mut edits: BTreeMap<String, ProposalStatus> = BTreeMap::new();
    for o in overrides {
        let (zone, minutes) = o
            .split_once('=')
            .and_then(|(z, m)| Some((z.to_string(), m.trim().parse::<u32>().ok()?)))
            .ok_or_else(|| usage(format!("override `{o}` is not ZONE=MINUTES")))?;
        edits.insert(zone, ProposalStatus::Overridden(minutes));
    }
    for z in skip {
        edits.insert(z.clone(), ProposalStatus::Skipped("operator".into()));
    }
    if let Some(unknown) = edits.keys().find(|z| !known.contains(*z)) {
        return Err(usage(format!("no proposal for zone {unknown} on {date}")));
    }
    for p in &mut proposals {
        if let Some(status) = edits.get(&p.zone_id) {
            p.status = status.clone();
        } else if accept && p.status == ProposalStatus::Proposed {
            p.status = ProposalStatus::Accepted;
        }
    }
    write_atomic(&path, &io::json_lines(&proposals).map_err(fail(Stage::Write))?).map_err(fail(Stage::Write))?;

    let executed = commit(&proposals, false);
    let log_path = cfg.paths.out_dir.join(EXECUTED_LOG);
    let mut log: Vec<ExecutedRuntime> = if log_path.is_file() {
        let text = std::fs::read_to_string(&log_path).map_err(|e| fail(Stage::Ingest)(Error::io(&log_path, e)))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| fail(Stage::Ingest)(Error::from(e)))?
    } else {
        Vec::new()
    };
    log.retain(|e| e.date != date);
    log.extend(executed.iter().cloned());
    log.sort_by(|a, b| (a.date, &a.zone_id).cmp(&(b.date, &b.zone_id)));
    write_atomic(&log_path, &io::json_lines(&log).map_err(fail(Stage::Write))?).map_err(fail(Stage::Write))?;
    for e in &executed {
        println!("{} {} {} min ({:?})", e.date, e.zone_id, e.minutes, e.status);
    }
    let pending = proposals.iter().filter(|p| p.status == ProposalStatus::Proposed).count();
    if pending > 0 {
        println!("{pending} proposals still pending; pass --accept to accept them");
    }
    println!("logged {} executed runtimes to {}", executed.len(), log_path.display());
    Ok(0)
}
