mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use soilcast_core::config::ForecastModel;
use soilcast_core::corpus::DEFAULT_CORPUS_SEED;

/// Soil-moisture screening, backup and overnight irrigation proposals.
///
/// Settings come from the built-in defaults, then the `--config` file, then
/// the global flags, each overriding the previous.
#[derive(Debug, Parser)]
#[command(name = "soilcast", version)]
struct Cli {
    /// TOML pipeline config; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Dataset file (raw readings or hourly matrix), overriding the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Knn,
    Sarima,
}

impl From<ModelArg> for ForecastModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Knn => ForecastModel::Knn,
            ModelArg::Sarima => ForecastModel::Sarima,
        }
    }
}

#[derive(Debug, Args)]
struct DateArg {
    /// Run date; data up to the configured run hour is visible. Defaults to
    /// the end of the dataset.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a replay directory generated from the synthetic corpus.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CORPUS_SEED)]
        corpus_seed: u64,
    },
    /// Resample raw readings to the hourly matrix and report rejected rows.
    Ingest {
        /// Raw CSV; defaults to the configured dataset.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the rules and model detectors on every sensor's trailing window.
    Screen(DateArg),
    /// Pairwise MI matrix, top-1 backup neighbours, DOT and JSON graph.
    MiGraph(DateArg),
    /// Hide a sensor's data over an outage and compare its backup with persistence.
    BackupSim {
        #[arg(long)]
        target: String,
        /// Defaults to the target's top-1 MI neighbour before the outage.
        #[arg(long)]
        neighbour: Option<String>,
        /// First hidden hour, e.g. 2022-12-23T05:00:00.
        #[arg(long)]
        outage_start: String,
        #[arg(long)]
        outage_hours: usize,
    },
    /// Per-sensor forecasts from the run hour of `--date`.
    Forecast {
        #[command(flatten)]
        date: DateArg,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// 24 to 72 hours.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Rolling-origin evaluation of the forecasters.
    Evaluate {
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelArg::Knn, ModelArg::Sarima])]
        models: Vec<ModelArg>,
    },
    /// Overnight proposals from a forecasts file.
    Schedule {
        #[arg(long)]
        date: NaiveDate,
        /// Defaults to the `forecast` output for the date.
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
    /// The full daily run: screen, backups, forecasts, proposals.
    RunDaily {
        #[arg(long)]
        date: NaiveDate,
    },
    /// Apply operator decisions to a day's proposals and log executed runtimes.
    Commit {
        #[arg(long)]
        date: NaiveDate,
        /// Accept every proposal still pending.
        #[arg(long)]
        accept: bool,
        /// Replace a zone's minutes, as ZONE=MINUTES.
        #[arg(long = "override", value_name = "ZONE=MINUTES")]
        overrides: Vec<String>,
        /// Skip a zone tonight.
        #[arg(long, value_name = "ZONE")]
        skip: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
