//! Sensor screening: rule checks first, model-based detectors only when the
//! rules pass.

pub mod ar;
pub mod detect;
pub mod iforest;
pub mod rules;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::SensorSeries;
use crate::error::Result;

pub use ar::SigmaMode;
pub use detect::{detect_ar_residuals, detect_iforest, fit_ar, fit_iforest, run_detectors, DetectorConfig};
pub use rules::{screen, RuleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    Missingness,
    LongGap,
    StuckAt,
    OutOfRange,
    Spike,
    IForest,
    Arima,
}

impl FaultKind {
    pub const RULES: [FaultKind; 5] = [
        FaultKind::Missingness,
        FaultKind::LongGap,
        FaultKind::StuckAt,
        FaultKind::OutOfRange,
        FaultKind::Spike,
    ];
}

/// Half-open slot range `[start, end)` relative to the screened window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRange {
    pub start: usize,
    pub end: usize,
}

impl SlotRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Merges sorted slot indices into contiguous ranges.
pub(crate) fn runs(slots: impl IntoIterator<Item = usize>) -> Vec<SlotRange> {
    let mut out: Vec<SlotRange> = Vec::new();
    for s in slots {
        match out.last_mut() {
            Some(r) if r.end == s => r.end += 1,
            _ => out.push(SlotRange { start: s, end: s + 1 }),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<SlotRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutcome {
    pub kind: FaultKind,
    pub fired: bool,
    pub evidence: Evidence,
}

impl RuleOutcome {
    pub(crate) fn new(kind: FaultKind, fired: bool, evidence: Evidence) -> Self {
        Self {
            kind,
            fired,
            evidence,
        }
    }
}

/// Screening outcome for one sensor window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultVerdict {
    pub sensor_id: String,
    #[serde(with = "crate::serde_ts")]
    pub window_start: NaiveDateTime,
    pub window_hours: usize,
    pub fired_rules: BTreeSet<FaultKind>,
    pub evidence: BTreeMap<FaultKind, Evidence>,
    /// Detectors that could not run on this window (too little data, degenerate input).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

impl FaultVerdict {
    pub(crate) fn empty(series: &SensorSeries) -> Self {
        Self {
            sensor_id: series.sensor_id().to_string(),
            window_start: series.grid().start(),
            window_hours: series.len(),
            fired_rules: BTreeSet::new(),
            evidence: BTreeMap::new(),
            skipped: Vec::new(),
        }
    }

    pub fn passes(&self) -> bool {
        self.fired_rules.is_empty()
    }

    pub fn is_faulty(&self) -> bool {
        !self.passes()
    }

    pub(crate) fn record(&mut self, outcome: RuleOutcome) {
        if outcome.fired {
            self.fired_rules.insert(outcome.kind);
            self.evidence.insert(outcome.kind, outcome.evidence);
        }
    }

    /// Earliest slot implicated by any fired rule, if the evidence has one.
    pub fn earliest_offending_slot(&self) -> Option<usize> {
        self.evidence
            .values()
            .flat_map(|e| e.slots.iter().map(|r| r.start))
            .min()
    }
}

/// Rule screen, followed by the model-based detectors when no rule fires.
pub fn screen_with_models(
    series: &SensorSeries,
    rules: &RuleConfig,
    detectors: &DetectorConfig,
    seed: u64,
) -> Result<FaultVerdict> {
    let mut verdict = screen(series, rules)?;
    if verdict.passes() {
        let report = run_detectors(series, detectors, seed)?;
        for outcome in report.outcomes {
            verdict.record(outcome);
        }
        verdict.skipped = report.skipped;
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_merge_contiguous_slots() {
        let r = runs([1, 2, 3, 7, 9, 10]);
        assert_eq!(
            r,
            vec![
                SlotRange { start: 1, end: 4 },
                SlotRange { start: 7, end: 8 },
                SlotRange { start: 9, end: 11 }
            ]
        );
        assert!(runs(Vec::<usize>::new()).is_empty());
    }

    #[test]
    fn verdict_serializes_kinds_by_name() {
        let mut v = FaultVerdict {
            sensor_id: "S".into(),
            window_start: crate::corpus::corpus_start(),
            window_hours: 200,
            fired_rules: BTreeSet::new(),
            evidence: BTreeMap::new(),
            skipped: vec![],
        };
        v.record(RuleOutcome::new(
            FaultKind::LongGap,
            true,
            Evidence {
                slots: vec![SlotRange { start: 3, end: 80 }],
                statistic: Some(77.0),
                note: None,
            },
        ));
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains("\"fired_rules\":[\"LongGap\"]"));
        assert!(json.contains("\"window_start\":\"2022-11-15T00:00:00\""));
        let back: FaultVerdict = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
