//! Per-trial outcome extraction and session-level summaries.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::Serialize;

use crate::config::AnalysisParams;
use crate::metrics::{completion_time, median, remove_outliers, sparc, speed_profile, MetricsError};
use crate::session::TickRecord;
use crate::task::{Condition, PoseId, TrialRecord};

/// Positions of both graspable points over a trial's analyzed leg.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segment {
    pub elbow: Vec<Vector3<f64>>,
    pub wrist: Vec<Vector3<f64>>,
}

/// Collects analyzed-leg samples (target shown up to and including the
/// confirmation tick) per trial from a tick stream.
#[derive(Debug, Clone, Default)]
pub struct SegmentCollector {
    segments: BTreeMap<u32, Segment>,
}

impl SegmentCollector {
    pub fn push(&mut self, rec: &TickRecord) {
        if rec.trial_id == 0 || !matches!(rec.phase, "reaching" | "holding" | "confirmed") {
            return;
        }
        let seg = self.segments.entry(rec.trial_id).or_default();
        seg.elbow.push(rec.elbow);
        seg.wrist.push(rec.wrist);
    }

    pub fn into_segments(self) -> BTreeMap<u32, Segment> {
        self.segments
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialSummary {
    pub session: u64,
    pub trial_id: u32,
    pub condition: Condition,
    pub block: u8,
    pub pose: PoseId,
    pub familiarization: bool,
    pub confirmed: bool,
    pub completion_s: Option<f64>,
    pub sparc_elbow: Option<f64>,
    pub sparc_wrist: Option<f64>,
}

fn point_sparc(samples: &[Vector3<f64>], fs: f64, p: &AnalysisParams) -> Result<Option<f64>, MetricsError> {
    if samples.len() < 3 {
        return Ok(None);
    }
    let speeds = speed_profile(samples, fs, &p.speed)?;
    match sparc(&speeds, fs, &p.sparc) {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::ZeroSpeed) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Completion time and smoothness of one trial. Smoothness is only
/// evaluated for confirmed trials.
pub fn summarize_trial(
    session: u64,
    rec: &TrialRecord,
    seg: Option<&Segment>,
    fs: f64,
    p: &AnalysisParams,
) -> Result<TrialSummary, MetricsError> {
    let completion = completion_time(rec);
    let (se, sw) = match (completion, seg) {
        (Some(_), Some(seg)) => (
            point_sparc(&seg.elbow, fs, p)?,
            point_sparc(&seg.wrist, fs, p)?,
        ),
        _ => (None, None),
    };
    Ok(TrialSummary {
        session,
        trial_id: rec.spec.trial_id,
        condition: rec.spec.condition,
        block: rec.spec.block,
        pose: rec.spec.pose,
        familiarization: rec.spec.familiarization,
        confirmed: completion.is_some(),
        completion_s: completion,
        sparc_elbow: se,
        sparc_wrist: sw,
    })
}

pub const METRICS: [&str; 3] = ["completion_s", "sparc_elbow", "sparc_wrist"];

fn metric(s: &TrialSummary, name: &str) -> Option<f64> {
    match name {
        "completion_s" => s.completion_s,
        "sparc_elbow" => s.sparc_elbow,
        "sparc_wrist" => s.sparc_wrist,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierRow {
    pub metric: &'static str,
    pub condition: Condition,
    pub n_before: usize,
    pub n_removed: usize,
    pub percent_removed: f64,
    pub mean_before: f64,
    pub sd_before: f64,
    pub mean_after: f64,
    pub sd_after: f64,
    pub q1: f64,
    pub q3: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// `session:trial` keys of the removed values.
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                n: 0,
                mean: None,
                median: None,
            };
        }
        Self {
            n: values.len(),
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            median: Some(median(values)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAggregate {
    pub completion_s: Stat,
    pub sparc_elbow: Stat,
    pub sparc_wrist: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionAggregate {
    pub trials: usize,
    pub confirmed: usize,
    pub unconfirmed: usize,
    pub completion_s: Stat,
    pub sparc_elbow: Stat,
    pub sparc_wrist: Stat,
    pub blocks: BTreeMap<String, BlockAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub sessions: usize,
    pub outlier_k: f64,
    /// Statistics below are computed after outlier removal.
    pub outliers_removed: bool,
    pub truncated: bool,
    pub conditions: BTreeMap<String, ConditionAggregate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOutput {
    /// Analyzed (non-familiarization) trials in input order.
    pub trials: Vec<TrialSummary>,
    pub outliers: Vec<OutlierRow>,
    pub aggregate: Aggregate,
}

fn key(s: &TrialSummary) -> String {
    format!("{}:{}", s.session, s.trial_id)
}

/// Outlier screening per (metric, condition) and condition/block aggregates
/// over the values that survive it.
pub fn analyze_summaries(all: &[TrialSummary], k: f64, truncated: bool) -> AnalysisOutput {
    let trials: Vec<TrialSummary> = all.iter().filter(|t| !t.familiarization).copied().collect();
    let mut sessions: Vec<u64> = trials.iter().map(|t| t.session).collect();
    sessions.sort_unstable();
    sessions.dedup();

    let mut outliers = Vec::new();
    let mut conditions = BTreeMap::new();
    for cond in [Condition::HD, Condition::VD] {
        let in_cond: Vec<&TrialSummary> = trials.iter().filter(|t| t.condition == cond).collect();
        if in_cond.is_empty() {
            continue;
        }
        // surviving (trial, value) pairs per metric
        let mut kept: BTreeMap<&'static str, Vec<(&TrialSummary, f64)>> = BTreeMap::new();
        for name in METRICS {
            let pairs: Vec<(&TrialSummary, f64)> =
                in_cond.iter().filter_map(|t| metric(t, name).map(|v| (*t, v))).collect();
            let values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let Ok(split) = remove_outliers(&values, k) else {
                kept.insert(name, Vec::new());
                continue;
            };
            let r = &split.report;
            let lo = r.lower_fence;
            let hi = r.upper_fence;
            let screened = values.len() >= 4;
            let (keep, drop): (Vec<_>, Vec<_>) = pairs
                .into_iter()
                .partition(|(_, v)| !screened || (*v >= lo && *v <= hi));
            outliers.push(OutlierRow {
                metric: name,
                condition: cond,
                n_before: r.n_before,
                n_removed: r.n_removed,
                percent_removed: r.percent_removed,
                mean_before: r.before.mean,
                sd_before: r.before.sd,
                mean_after: r.after.mean,
                sd_after: r.after.sd,
                q1: r.q1,
                q3: r.q3,
                lower_fence: lo,
                upper_fence: hi,
                removed: drop.iter().map(|(t, _)| key(t)).collect(),
            });
            kept.insert(name, keep);
        }
        let stat = |name: &str, block: Option<u8>| {
            let v: Vec<f64> = kept[name]
                .iter()
                .filter(|(t, _)| block.is_none_or(|b| t.block == b))
                .map(|p| p.1)
                .collect();
            Stat::of(&v)
        };
        let mut block_ids: Vec<u8> = in_cond.iter().map(|t| t.block).collect();
        block_ids.sort_unstable();
        block_ids.dedup();
        let blocks = block_ids
            .into_iter()
            .map(|b| {
                (
                    b.to_string(),
                    BlockAggregate {
                        completion_s: stat("completion_s", Some(b)),
                        sparc_elbow: stat("sparc_elbow", Some(b)),
                        sparc_wrist: stat("sparc_wrist", Some(b)),
                    },
                )
            })
            .collect();
        let confirmed = in_cond.iter().filter(|t| t.confirmed).count();
        conditions.insert(
            cond.as_str().to_string(),
            ConditionAggregate {
                trials: in_cond.len(),
                confirmed,
                unconfirmed: in_cond.len() - confirmed,
                completion_s: stat("completion_s", None),
                sparc_elbow: stat("sparc_elbow", None),
                sparc_wrist: stat("sparc_wrist", None),
                blocks,
            },
        );
    }
    AnalysisOutput {
        trials,
        outliers,
        aggregate: Aggregate {
            sessions: sessions.len(),
            outlier_k: k,
            outliers_removed: true,
            truncated,
            conditions,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(id: u32, cond: Condition, block: u8, completion: f64) -> TrialSummary {
        TrialSummary {
            session: 1,
            trial_id: id,
            condition: cond,
            block,
            pose: PoseId::Drink,
            familiarization: false,
            confirmed: true,
            completion_s: Some(completion),
            sparc_elbow: Some(-1.5),
            sparc_wrist: Some(-1.6),
        }
    }

    #[test]
    fn injected_slow_trial_is_reported() {
        let mut all: Vec<TrialSummary> = (1..=15)
            .map(|i| trial(i, Condition::HD, 1 + (i as u8 - 1) / 5, 19.0 + (i % 4) as f64))
            .collect();
        all.push(trial(16, Condition::HD, 3, 100.0));
        let out = analyze_summaries(&all, 2.0, false);
        let row = out
            .outliers
            .iter()
            .find(|r| r.metric == "completion_s" && r.condition == Condition::HD)
            .unwrap();
        assert_eq!(row.removed, vec!["1:16".to_string()]);
        assert_eq!(row.n_before, 16);
        assert_eq!(row.n_removed, 1);
        let hd = &out.aggregate.conditions["HD"];
        assert!(hd.completion_s.mean.unwrap() < 23.0);
        assert_eq!(hd.blocks["3"].completion_s.n, 5);
    }

    #[test]
    fn familiarization_is_excluded() {
        let mut t = trial(1, Condition::VD, 0, 5.0);
        t.familiarization = true;
        let out = analyze_summaries(&[t, trial(2, Condition::VD, 1, 6.0)], 2.0, false);
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.aggregate.conditions["VD"].trials, 1);
    }
}
