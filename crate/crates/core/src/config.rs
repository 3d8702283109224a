//! TOML pipeline configuration. Relative paths resolve against the config
//! file's directory; CLI flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{DetectorConfig, RuleConfig};
use crate::error::{Error, Result};
use crate::forecast::{EvalConfig, KnnConfig, SarimaConfig};
use crate::mi::KsgConfig;
use crate::schedule::{BlackoutWindow, NightSpan};
use crate::virtual_sensor::MlpConfig;

pub const DEFAULT_SEED: u64 = 20230117;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Raw readings or an hourly matrix.
    pub dataset: PathBuf,
    pub zones: PathBuf,
    /// Optional `date,precip_mm_24h` forecast file; missing dates count as dry.
    pub precip: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecastModel {
    #[default]
    Knn,
    Sarima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// Hour of the daily run; data up to this hour is visible.
    pub run_hour: u32,
    pub night: NightSpan,
    pub screen_window_hours: usize,
    pub mi_window_hours: usize,
    pub forecast_model: ForecastModel,
    /// Ignore model-detector alarms raised by most of a zone at once.
    pub suppress_common_mode: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            run_hour: 16,
            night: NightSpan::default(),
            screen_window_hours: 900,
            mi_window_hours: 900,
            forecast_model: ForecastModel::Knn,
            suppress_common_mode: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub rules: RuleConfig,
    pub detectors: DetectorConfig,
    pub ksg: KsgConfig,
    pub knn: KnnConfig,
    pub sarima: SarimaConfig,
    pub backup: MlpConfig,
    pub eval: EvalConfig,
    pub schedule: ScheduleConfig,
    pub blackouts: Vec<BlackoutWindow>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            paths: Paths::default(),
            rules: RuleConfig::default(),
            detectors: DetectorConfig::default(),
            ksg: KsgConfig::default(),
            knn: KnnConfig::default(),
            sarima: SarimaConfig::default(),
            backup: MlpConfig::default(),
            eval: EvalConfig::default(),
            schedule: ScheduleConfig::default(),
            blackouts: Vec::new(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses a config file, resolving relative paths. Validation
    /// is left to the caller so CLI overrides can apply first.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.paths.dataset);
        resolve(base, &mut cfg.paths.zones);
        resolve(base, &mut cfg.paths.out_dir);
        if let Some(p) = cfg.paths.precip.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    /// Every problem in the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = [
            self.rules.validate(),
            self.detectors.validate(),
            self.ksg.validate(),
            self.knn.validate(),
            self.sarima.validate(),
            self.backup.validate(),
            self.eval.validate(),
            self.schedule.night.validate(),
        ]
        .into_iter()
        .filter_map(|r| r.err().map(|e| e.to_string()))
        .collect();
        if self.schedule.run_hour > 23 {
            out.push("schedule.run_hour must be <= 23".into());
        }
        for (name, hours) in [
            ("screen_window_hours", self.schedule.screen_window_hours),
            ("mi_window_hours", self.schedule.mi_window_hours),
        ] {
            if !(crate::data::WINDOW_MIN_HOURS..=crate::data::WINDOW_MAX_HOURS).contains(&hours) {
                out.push(format!("schedule.{name} must be in [200, 900]"));
            }
        }
        for b in &self.blackouts {
            if b.end <= b.start {
                out.push(format!("blackout `{}` must end after it starts", b.reason));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Checks that the input files exist.
    pub fn check_paths(&self, need_zones: bool) -> Result<()> {
        let mut missing = Vec::new();
        let mut check = |p: &Path, what: &str| {
            if !p.is_file() {
                missing.push(format!("{what} `{}` not found", p.display()));
            }
        };
        check(&self.paths.dataset, "dataset");
        if need_zones {
            check(&self.paths.zones, "zones");
        }
        if let Some(p) = &self.paths.precip {
            check(p, "precip");
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(missing.join("; ")))
        }
    }

    /// SHA-256 over the canonical JSON form, excluding paths and the output
    /// directory so that relocating a replay does not change the hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths = Paths::default();
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert!(cfg.problems().is_empty());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml(
            "seed = 7\n[knn]\nk = 3\n[rules]\nspike_threshold_pct = 4.0\n[schedule.night]\nstart_hour = 21\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.knn.k, 3);
        assert_eq!(cfg.knn.lags, 24);
        assert_eq!(cfg.rules.spike_threshold_pct, 4.0);
        assert_eq!(cfg.schedule.night.start_hour, 21);
        assert_eq!(cfg.schedule.night.end_hour, 6);
    }

    #[test]
    fn every_problem_is_listed() {
        let cfg = PipelineConfig::from_toml(
            "[knn]\nk = 0\n[detectors]\nflag_fraction = 2.0\n[schedule]\nrun_hour = 30\n",
        )
        .unwrap();
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
    }

    #[test]
    fn bad_types_error() {
        assert!(PipelineConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[paths]\ndataset = \"data/h.csv\"\nout_dir = \"/abs/out\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.dataset, dir.path().join("data/h.csv"));
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/abs/out"));
    }
}
