use std::path::Path;
use std::process::{Command, Output};

fn soilcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soilcast"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A fresh replay directory; commands then run with `--config config.toml`.
fn replay() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = soilcast(dir.path(), &["synth", "--dir", "."]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn with_config<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut all = vec!["--config", "config.toml"];
    all.extend_from_slice(args);
    all
}

#[test]
fn ingest_resamples_raw_readings_to_the_hourly_grid() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["ingest", "--input", "raw.csv"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let hourly = std::fs::read_to_string(dir.path().join("out/hourly.csv")).unwrap();
    let mut lines = hourly.lines().filter(|l| !l.starts_with('#'));
    let columns = lines.next().unwrap().split(',').count();
    assert_eq!(columns, 1 + 13);
    assert_eq!(lines.count(), 1528);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/ingest_report.json")).unwrap()).unwrap();
    assert_eq!(report["rejected"].as_array().unwrap().len(), 0);
}

#[test]
fn ingest_reports_bad_rows_by_line_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("raw.csv"),
        "timestamp,sensor_id,vwc\n\
         2023-01-01T00:10:00,S1,20.5\n\
         not-a-time,S1,20.0\n\
         2023-01-01T01:10:00,S1,21.0\n",
    )
    .unwrap();
    let o = soilcast(dir.path(), &["--out-dir", "out", "ingest", "--input", "raw.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/ingest_report.json")).unwrap()).unwrap();
    let rejected = report["rejected"].as_array().unwrap();
    assert_eq!(rejected.len(), 1);
    assert!(rejected[0].as_str().unwrap().starts_with("line 3"), "{rejected:?}");

    std::fs::write(dir.path().join("empty.csv"), "timestamp,sensor_id,vwc\n").unwrap();
    let o = soilcast(dir.path(), &["--out-dir", "out", "ingest", "--input", "empty.csv"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn backup_sim_with_zero_hour_outage_reports_no_error() {
    let dir = replay();
    let args = ["backup-sim", "--target", "SENS0021", "--outage-start", "2023-01-01T00:00:00", "--outage-hours", "0"];
    let o = soilcast(dir.path(), &with_config(&args));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("backup MAE n/a"), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/backup_sim.json")).unwrap()).unwrap();
    assert!(report["backup_mae"].is_null());
}

#[test]
fn backup_sim_marks_the_cutover_and_beats_persistence() {
    let dir = replay();
    let args = ["backup-sim", "--target", "SENS0021", "--outage-start", "2022-12-28T00:00:00", "--outage-hours", "240"];
    let o = soilcast(dir.path(), &with_config(&args));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/backup_sim.json")).unwrap()).unwrap();
    assert_eq!(report["neighbour"], "SENS0012");
    assert!(report["backup_mae"].as_f64().unwrap() < report["persistence_mae"].as_f64().unwrap());
    let series = std::fs::read_to_string(dir.path().join("out/backup_sim.csv")).unwrap();
    assert!(series.contains("# cutover=2022-12-28T00:00:00"));
    let first_outage = series.lines().find(|l| l.contains(",outage,")).unwrap();
    assert!(first_outage.starts_with("2022-12-28T00:00:00"), "{first_outage}");
}

#[test]
fn backup_sim_rejects_self_backup_and_outage_past_the_data() {
    let dir = replay();
    let args = [
        "backup-sim", "--target", "SENS0021", "--neighbour", "SENS0021",
        "--outage-start", "2023-01-01T00:00:00", "--outage-hours", "24",
    ];
    let o = soilcast(dir.path(), &with_config(&args));
    assert_eq!(o.status.code(), Some(2));
    let args = ["backup-sim", "--target", "SENS0021", "--outage-start", "2023-01-17T00:00:00", "--outage-hours", "48"];
    let o = soilcast(dir.path(), &with_config(&args));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("past the end"), "{}", stderr(&o));
}

#[test]
fn mi_graph_writes_dot_and_json() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["mi-graph", "--date", "2023-01-12"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let dot = std::fs::read_to_string(dir.path().join("out/mi_graph.dot")).unwrap();
    assert!(dot.trim_start().starts_with("graph") || dot.trim_start().starts_with("digraph"), "{dot}");
    assert!(dot.contains("SENS0021"));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/mi_graph.json")).unwrap()).unwrap();
    assert!(json.is_object());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/mi-graph.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 20230117);
}

#[test]
fn forecast_then_schedule_proposes_every_zone() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["forecast", "--date", "2023-01-12", "--horizon", "48"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let forecasts = std::fs::read_to_string(dir.path().join("out/forecasts_2023-01-12.csv")).unwrap();
    assert!(forecasts.starts_with("# command=forecast seed=20230117 config_hash="));
    assert_eq!(forecasts.lines().count(), 2 + 13 * 48);

    let o = soilcast(dir.path(), &with_config(&["schedule", "--date", "2023-01-12"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let proposals = std::fs::read_to_string(dir.path().join("out/proposals_2023-01-12.jsonl")).unwrap();
    assert_eq!(proposals.lines().count(), 5);

    let o = soilcast(dir.path(), &with_config(&["forecast", "--horizon", "12"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_daily_twice_is_byte_identical() {
    let dir = replay();
    let day = dir.path().join("out/2023-01-12");
    let snapshot = || {
        let mut files: Vec<_> = std::fs::read_dir(&day).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.into_iter().map(|p| (p.clone(), std::fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    let o = soilcast(dir.path(), &with_config(&["run-daily", "--date", "2023-01-12"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let first = snapshot();
    let o = soilcast(dir.path(), &with_config(&["run-daily", "--date", "2023-01-12"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, snapshot());
    assert_eq!(first.len(), 6);
}

#[test]
fn commit_applies_overrides_and_replaces_the_days_log() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["run-daily", "--date", "2023-01-12"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let commit = |extra: &[&str]| {
        let mut args = vec!["commit", "--date", "2023-01-12"];
        args.extend_from_slice(extra);
        soilcast(dir.path(), &with_config(&args))
    };
    let o = commit(&["--override", "Z1=30", "--skip", "Z4", "--accept"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("out/executed.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(entries.iter().all(|e| e["zone_id"] != "Z4"));
    let z1 = entries.iter().find(|e| e["zone_id"] == "Z1").unwrap();
    assert_eq!(z1["minutes"], 30);

    // committing again replaces rather than appends
    let o = commit(&["--override", "Z1=10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(dir.path().join("out/executed.jsonl")).unwrap();
    assert_eq!(log.lines().count(), entries.len());
    assert!(log.contains(r#""zone_id":"Z1","date":"2023-01-12","minutes":10"#), "{log}");

    let o = commit(&["--skip", "Z9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_lists_problems_and_exits_2() {
    let dir = replay();
    let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let broken = text
        .replacen("screen_window_hours = 900", "screen_window_hours = 50", 1)
        .replacen("mi_window_hours = 900", "mi_window_hours = 5000", 1);
    assert_ne!(text, broken, "config layout changed");
    std::fs::write(dir.path().join("broken.toml"), broken).unwrap();
    let o = soilcast(dir.path(), &["--config", "broken.toml", "screen"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2 configuration problems"), "{}", stderr(&o));

    let o = soilcast(dir.path(), &["--config", "absent.toml", "screen"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_daily_without_history_exits_with_the_ingest_code() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["run-daily", "--date", "2022-12-01"]));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_both_models() {
    let dir = replay();
    let o = soilcast(dir.path(), &with_config(&["evaluate"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/evaluation.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("knn")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("sarima")), "{csv}");
}
