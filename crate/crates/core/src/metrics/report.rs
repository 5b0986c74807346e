//! Serializable audit report: pair counts, threshold accuracy, FAR audits per
//! target, score summaries and DET curves. Maps are keyed by subgroup code so
//! the JSON is stable and diffable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    det_curve, score_distribution_summary, subgroup_far_audit, subgroup_threshold_audit,
    threshold_accuracy_table, threshold_for_far, DetPoint, FarAudit, FarOperatingPoint,
    ScoreSummary, ScoredPairs, SubgroupThresholdFar, ThresholdAccuracy,
};
use crate::embedding::SubgroupLabel;
use crate::error::{Error, Result};
use crate::pairing::PairList;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub genuine: usize,
    pub imposter: usize,
}

/// Spread statistics over subgroups at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation across subgroups.
    pub std: f64,
}

impl SubgroupSpread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarTargetReport {
    pub target_far: f64,
    /// Pooled calibration; absent when the target is unreachable.
    pub pooled: Option<FarOperatingPoint<f64>>,
    /// Every subgroup at the pooled threshold.
    pub global_threshold: Option<FarAudit>,
    pub percent_difference_spread: Option<SubgroupSpread>,
    pub tar_spread: Option<SubgroupSpread>,
    /// Every subgroup calibrated to the target on its own pairs.
    pub subgroup_thresholds: Option<BTreeMap<SubgroupLabel, SubgroupThresholdFar>>,
    /// Why a block above is absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub pair_counts: BTreeMap<SubgroupLabel, PairCounts>,
    pub thresholds: ThresholdAccuracy,
    pub far_targets: Vec<FarTargetReport>,
    pub score_summary: BTreeMap<SubgroupLabel, ScoreSummary>,
    /// `pooled` plus one curve per subgroup code.
    pub det: BTreeMap<String, Vec<DetPoint>>,
}

impl AuditReport {
    pub fn target(&self, far: f64) -> Option<&FarTargetReport> {
        self.far_targets.iter().find(|t| t.target_far == far)
    }
}

fn unreachable_note(e: &Error) -> Option<String> {
    match e {
        Error::UnreachableFar { .. } => Some(e.to_string()),
        _ => None,
    }
}

pub fn build_audit_report<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
    far_targets: &[f64],
    det_points: usize,
) -> Result<AuditReport> {
    let mut pair_counts = BTreeMap::new();
    for (label, idx) in pairs.indices_by_subgroup() {
        let genuine = idx.iter().filter(|&&n| scored.labels[n]).count();
        pair_counts.insert(
            label,
            PairCounts {
                genuine,
                imposter: idx.len() - genuine,
            },
        );
    }

    let mut targets = Vec::with_capacity(far_targets.len());
    for &target in far_targets {
        let mut report = FarTargetReport {
            target_far: target,
            pooled: None,
            global_threshold: None,
            percent_difference_spread: None,
            tar_spread: None,
            subgroup_thresholds: None,
            notes: Vec::new(),
        };
        match threshold_for_far(scored, target) {
            Ok(op) => {
                let audit = subgroup_far_audit(scored, pairs, op.threshold)?;
                let pd: Vec<f64> = audit.per_subgroup.values().map(|s| s.percent_difference).collect();
                let tars: Vec<f64> = audit.per_subgroup.values().filter_map(|s| s.tar).collect();
                report.percent_difference_spread = SubgroupSpread::of(&pd);
                report.tar_spread = SubgroupSpread::of(&tars);
                report.global_threshold = Some(audit);
                report.pooled = Some(FarOperatingPoint {
                    target_far: op.target_far,
                    threshold: op.threshold.as_f64(),
                    achieved_far: op.achieved_far,
                    tar: op.tar,
                });
            }
            Err(e) => report
                .notes
                .push(format!("pooled: {}", unreachable_note(&e).ok_or(e)?)),
        }
        match subgroup_threshold_audit(scored, pairs, target) {
            Ok(m) => report.subgroup_thresholds = Some(m),
            Err(e) => report
                .notes
                .push(format!("subgroup thresholds: {}", unreachable_note(&e).ok_or(e)?)),
        }
        targets.push(report);
    }

    let mut det = BTreeMap::new();
    det.insert("pooled".to_string(), det_curve(scored, det_points)?);
    for (label, idx) in pairs.indices_by_subgroup() {
        det.insert(label.code(), det_curve(&scored.select(&idx), det_points)?);
    }

    Ok(AuditReport {
        pair_counts,
        thresholds: threshold_accuracy_table(scored, pairs)?,
        far_targets: targets,
        score_summary: score_distribution_summary(scored, pairs)?,
        det,
    })
}
