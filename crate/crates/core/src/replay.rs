//! Writes a self-contained replay directory from the synthetic corpus: raw
//! readings, the hourly matrix, a precipitation forecast, zones and a
//! pipeline config pointing at them.

use std::path::{Path, PathBuf};

use crate::config::{Paths, PipelineConfig};
use crate::corpus::{generate, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::io::{self, write_atomic};
use crate::schedule::{ZoneConfig, ZonesFile};

struct ZoneSite {
    id: &'static str,
    main_line: &'static str,
    application_rate: f64,
    target_vwc: f64,
    vwc_to_mm: f64,
    max_runtime: u32,
}

// Site data for the corpus zones. Targets sit about half a percent above the
// members' typical morning minimum so most nights ask for some water.
const SITES: [ZoneSite; 5] = [
    ZoneSite { id: "Z1", main_line: "ML-A", application_rate: 0.20, target_vwc: 24.5, vwc_to_mm: 4.0, max_runtime: 90 },
    ZoneSite { id: "Z2", main_line: "ML-A", application_rate: 0.25, target_vwc: 30.3, vwc_to_mm: 4.0, max_runtime: 90 },
    ZoneSite { id: "Z3", main_line: "ML-B", application_rate: 0.18, target_vwc: 21.5, vwc_to_mm: 3.5, max_runtime: 75 },
    ZoneSite { id: "Z4", main_line: "ML-B", application_rate: 0.22, target_vwc: 27.8, vwc_to_mm: 4.0, max_runtime: 90 },
    ZoneSite { id: "Z5", main_line: "ML-C", application_rate: 0.20, target_vwc: 25.0, vwc_to_mm: 4.5, max_runtime: 120 },
];

pub fn zones_for(corpus: &SyntheticCorpus) -> Result<ZonesFile> {
    let zones = corpus
        .zones
        .iter()
        .map(|(id, members)| {
            let site = SITES
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Config(format!("no site data for zone {id}")))?;
            Ok(ZoneConfig {
                zone_id: id.clone(),
                members: members.clone(),
                application_rate: site.application_rate,
                target_vwc: site.target_vwc,
                vwc_to_mm: site.vwc_to_mm,
                main_line: site.main_line.to_string(),
                max_runtime: site.max_runtime,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZonesFile { zones })
}

pub const RAW_FILE: &str = "raw.csv";
pub const HOURLY_FILE: &str = "hourly.csv";
pub const PRECIP_FILE: &str = "precip.csv";
pub const ZONES_FILE: &str = "zones.toml";
pub const CONFIG_FILE: &str = "config.toml";

/// Generates the corpus for `seed` and writes the replay files into `dir`.
/// The returned config has absolute paths; the written one is relative so
/// the directory can be moved.
pub fn write_replay(dir: &Path, corpus_seed: u64, pipeline_seed: u64) -> Result<PipelineConfig> {
    let corpus = generate(corpus_seed)?;
    let mut raw = Vec::new();
    io::write_raw(&corpus.readings, &mut raw)?;
    write_atomic(&dir.join(RAW_FILE), &raw)?;
    write_atomic(&dir.join(HOURLY_FILE), &io::hourly_matrix_bytes(&corpus.hourly, None)?)?;
    write_atomic(&dir.join(PRECIP_FILE), &io::precip_bytes(&corpus.precip_forecast_mm))?;
    let zones = toml::to_string(&zones_for(&corpus)?).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&dir.join(ZONES_FILE), zones.as_bytes())?;

    let relative = PipelineConfig {
        seed: pipeline_seed,
        paths: Paths {
            dataset: HOURLY_FILE.into(),
            zones: ZONES_FILE.into(),
            precip: Some(PRECIP_FILE.into()),
            out_dir: PathBuf::from("out"),
        },
        ..PipelineConfig::default()
    };
    let text = toml::to_string(&relative).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&dir.join(CONFIG_FILE), text.as_bytes())?;
    PipelineConfig::load(&dir.join(CONFIG_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_CORPUS_SEED;

    #[test]
    fn replay_dir_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_replay(dir.path(), DEFAULT_CORPUS_SEED, 5).unwrap();
        assert_eq!(cfg.seed, 5);
        cfg.validate().unwrap();
        cfg.check_paths(true).unwrap();
        let zones = ZonesFile::load(&cfg.paths.zones).unwrap();
        assert_eq!(zones.zones.len(), 5);
        let (ds, summary) = io::load_dataset(&cfg.paths.dataset).unwrap();
        assert_eq!((ds.len(), ds.n_slots(), summary.format), (13, 1528, "hourly"));
        let (raw, summary) = io::load_dataset(&dir.path().join(RAW_FILE)).unwrap();
        assert_eq!(summary.format, "raw");
        assert_eq!(raw.n_slots(), 1528);
    }
}
