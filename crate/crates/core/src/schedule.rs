//! Overnight irrigation proposals: zone moisture deficits from member
//! forecasts, rain credit, runtime minutes at the zone's application rate,
//! and sequencing so each main line runs one zone at a time outside
//! blackout windows.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneConfig {
    pub zone_id: String,
    pub members: Vec<String>,
    /// Catch-can application rate, mm per minute.
    pub application_rate: f64,
    pub target_vwc: f64,
    /// mm of water per VWC-percent over the root depth.
    pub vwc_to_mm: f64,
    pub main_line: String,
    pub max_runtime: u32,
}

impl ZoneConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.application_rate > 0.0) {
            problems.push("application_rate must be positive");
        }
        if !(self.target_vwc > 0.0 && self.target_vwc < 100.0) {
            problems.push("target_vwc must be in (0, 100)");
        }
        if !(self.vwc_to_mm > 0.0) {
            problems.push("vwc_to_mm must be positive");
        }
        if self.max_runtime == 0 {
            problems.push("max_runtime must be positive");
        }
        if self.members.is_empty() {
            problems.push("zone needs at least one member sensor");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("zone {}: {}", self.zone_id, problems.join("; "))))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZonesFile {
    #[serde(rename = "zone")]
    pub zones: Vec<ZoneConfig>,
}

impl ZonesFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let zf: ZonesFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        zf.validate()?;
        Ok(zf)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = self.zones.iter().filter_map(|z| z.validate().err()).map(|e| e.to_string()).collect();
        let mut seen = std::collections::BTreeSet::new();
        for z in &self.zones {
            if !seen.insert(&z.zone_id) {
                problems.push(format!("duplicate zone {}", z.zone_id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackoutWindow {
    #[serde(with = "crate::serde_ts")]
    pub start: NaiveDateTime,
    #[serde(with = "crate::serde_ts")]
    pub end: NaiveDateTime,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NightSpan {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for NightSpan {
    fn default() -> Self {
        Self { start_hour: 22, end_hour: 6 }
    }
}

impl NightSpan {
    pub fn validate(&self) -> Result<()> {
        if self.start_hour > 23 || self.end_hour > 23 || self.start_hour == self.end_hour {
            return Err(Error::Config("night span hours must be distinct and <= 23".into()));
        }
        Ok(())
    }

    /// The night that starts on `date`, ending the next morning when the end
    /// hour is not after the start hour.
    pub fn interval(&self, date: NaiveDate) -> (NaiveDateTime, NaiveDateTime) {
        let at = |d: NaiveDate, h: u32| d.and_time(NaiveTime::from_hms_opt(h, 0, 0).expect("valid hour"));
        let start = at(date, self.start_hour);
        let end_day = if self.end_hour > self.start_hour { date } else { date + Duration::days(1) };
        (start, at(end_day, self.end_hour))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalStatus {
    Proposed,
    Accepted,
    Overridden(u32),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub zone_id: String,
    pub date: NaiveDate,
    pub main_line: String,
    pub runtime_minutes: u32,
    /// Minutes before capacity truncation.
    pub requested_minutes: u32,
    #[serde(with = "crate::serde_ts::option")]
    pub window_start: Option<NaiveDateTime>,
    #[serde(with = "crate::serde_ts::option")]
    pub window_end: Option<NaiveDateTime>,
    pub zone_forecast_vwc: Option<f64>,
    pub deficit_mm: f64,
    pub rain_credit_mm: f64,
    pub capped: bool,
    pub truncated: bool,
    pub status: ProposalStatus,
}

/// Zone forecast (mean over members of each member's minimum forecast) and
/// the resulting deficit in mm. `None` when no member has a forecast.
pub fn compute_deficit(zone: &ZoneConfig, forecasts: &BTreeMap<String, Vec<f64>>) -> Option<(f64, f64)> {
    let minima: Vec<f64> = zone
        .members
        .iter()
        .filter_map(|m| forecasts.get(m))
        .filter(|f| !f.is_empty())
        .map(|f| f.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    if minima.is_empty() {
        return None;
    }
    let zone_vwc = mean(&minima);
    Some((zone_vwc, (zone.target_vwc - zone_vwc).max(0.0) * zone.vwc_to_mm))
}

/// Deficit left after forecast rain over the coming 24 h.
pub fn rain_credit(deficit_mm: f64, precip_mm: f64) -> f64 {
    (deficit_mm - precip_mm.max(0.0)).max(0.0)
}

/// Runtime minutes to apply `net_deficit_mm`, capped at `max_runtime`.
/// Returns `(minutes, capped)`.
pub fn minutes_from_deficit(net_deficit_mm: f64, zone: &ZoneConfig) -> (u32, bool) {
    let raw = net_deficit_mm.max(0.0) / zone.application_rate;
    // absorb rounding noise so 5 / 0.5 stays 10
    let minutes = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    if minutes > zone.max_runtime as f64 {
        (zone.max_runtime, true)
    } else {
        (minutes as u32, false)
    }
}

/// Proposal for one zone before sequencing.
pub fn propose(
    zone: &ZoneConfig,
    date: NaiveDate,
    forecasts: &BTreeMap<String, Vec<f64>>,
    precip_mm: f64,
    fallback_minutes: Option<u32>,
) -> Proposal {
    let mut p = Proposal {
        zone_id: zone.zone_id.clone(),
        date,
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
    match compute_deficit(zone, forecasts) {
        Some((vwc, deficit)) => {
            let net = rain_credit(deficit, precip_mm);
            let (minutes, capped) = minutes_from_deficit(net, zone);
            p.zone_forecast_vwc = Some(vwc);
            p.deficit_mm = deficit;
            p.rain_credit_mm = deficit - net;
            p.runtime_minutes = minutes;
            p.capped = capped;
        }
        None => {
            p.runtime_minutes = fallback_minutes.unwrap_or(0).min(zone.max_runtime);
            p.status = ProposalStatus::Skipped("no-data".into());
        }
    }
    p.requested_minutes = p.runtime_minutes;
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overflow {
    pub main_line: String,
    pub demand_minutes: u32,
    pub capacity_minutes: u32,
    pub unplaced_minutes: u32,
}

/// Free intervals of the night after removing blackouts, in time order.
pub fn free_intervals(
    night: (NaiveDateTime, NaiveDateTime),
    blackouts: &[BlackoutWindow],
) -> Vec<(NaiveDateTime, NaiveDateTime)> {
    let mut free = vec![night];
    for b in blackouts {
        free = free
            .into_iter()
            .flat_map(|(s, e)| {
                if b.end <= s || b.start >= e {
                    vec![(s, e)]
                } else {
                    let mut parts = Vec::new();
                    if b.start > s {
                        parts.push((s, b.start));
                    }
                    if b.end < e {
                        parts.push((b.end, e));
                    }
                    parts
                }
            })
            .collect();
    }
    free
}

fn minutes_between(a: NaiveDateTime, b: NaiveDateTime) -> u32 {
    (b - a).num_minutes().max(0) as u32
}

/// Serialises each main line's zones into contiguous windows inside the free
/// part of the night. When a line's demand exceeds its free minutes every
/// runtime on it is scaled down proportionally; a zone that still cannot fit
/// takes the largest gap left. Lines run independently of each other.
pub fn sequence_zones(
    mut proposals: Vec<Proposal>,
    blackouts: &[BlackoutWindow],
    night: (NaiveDateTime, NaiveDateTime),
) -> (Vec<Proposal>, Vec<Overflow>) {
    let free = free_intervals(night, blackouts);
    let capacity: u32 = free.iter().map(|(s, e)| minutes_between(*s, *e)).sum();
    let mut overflow = Vec::new();

    let mut lines: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        lines.entry(p.main_line.clone()).or_default().push(i);
    }
    for (line, mut idx) in lines {
        idx.sort_by(|&a, &b| proposals[a].zone_id.cmp(&proposals[b].zone_id));
        let demand: u32 = idx.iter().map(|&i| proposals[i].runtime_minutes).sum();
        if demand > capacity {
            for &i in &idx {
                let p = &mut proposals[i];
                let scaled = (p.runtime_minutes as u64 * capacity as u64 / demand as u64) as u32;
                if scaled < p.runtime_minutes {
                    p.runtime_minutes = scaled;
                    p.truncated = true;
                }
            }
        }
        let mut gaps = free.clone();
        let mut unplaced = 0;
        for &i in &idx {
            let p = &mut proposals[i];
            if p.runtime_minutes == 0 {
                continue;
            }
            let need = p.runtime_minutes;
            let slot = gaps
                .iter()
                .position(|(s, e)| minutes_between(*s, *e) >= need)
                .or_else(|| {
                    // fragmentation: fall back to the largest remaining gap
                    gaps.iter()
                        .enumerate()
                        .filter(|(_, (s, e))| minutes_between(*s, *e) > 0)
                        .max_by_key(|(k, (s, e))| (minutes_between(*s, *e), std::cmp::Reverse(*k)))
                        .map(|(k, _)| k)
                });
            let Some(k) = slot else {
                unplaced += need;
                p.runtime_minutes = 0;
                p.truncated = true;
                continue;
            };
            let (s, e) = gaps[k];
            let run = need.min(minutes_between(s, e));
            if run < need {
                unplaced += need - run;
                p.truncated = true;
            }
            let end = s + Duration::minutes(run as i64);
            p.runtime_minutes = run;
            p.window_start = Some(s);
            p.window_end = Some(end);
            gaps[k] = (end, e);
        }
        if demand > capacity || unplaced > 0 {
            overflow.push(Overflow {
                main_line: line,
                demand_minutes: demand,
                capacity_minutes: capacity,
                unplaced_minutes: unplaced + demand.saturating_sub(capacity),
            });
        }
    }
    (proposals, overflow)
}

/// Runtime actually logged by the commit step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedRuntime {
    pub zone_id: String,
    pub date: NaiveDate,
    pub minutes: u32,
    #[serde(with = "crate::serde_ts::option")]
    pub window_start: Option<NaiveDateTime>,
    pub status: ProposalStatus,
}

/// Executed runtimes for operator-accepted or overridden proposals. Plain
/// proposals are committed only with `accept_pending`.
pub fn commit(proposals: &[Proposal], accept_pending: bool) -> Vec<ExecutedRuntime> {
    proposals
        .iter()
        .filter_map(|p| {
            let minutes = match &p.status {
                ProposalStatus::Accepted => p.runtime_minutes,
                ProposalStatus::Overridden(m) => *m,
                ProposalStatus::Proposed if accept_pending => p.runtime_minutes,
                _ => return None,
            };
            Some(ExecutedRuntime {
                zone_id: p.zone_id.clone(),
                date: p.date,
                minutes,
                window_start: p.window_start,
                status: p.status.clone(),
            })
        })
        .collect()
}
