//! Cosine matching and verification metrics.
//!
//! A pair is predicted genuine iff its score is strictly greater than the
//! threshold. Rates are formed from integer counts with a single division.

mod audit;
mod calibrate;
mod det;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::pairing::PairList;
use crate::scalar::{self, Scalar};

pub use audit::{
    percent_difference, percent_error, score_distribution_summary, subgroup_far_audit,
    subgroup_tar, subgroup_threshold_audit, DistributionStats, FarAudit, ScoreSummary,
    SubgroupFar, SubgroupThresholdFar,
};
pub use calibrate::{
    calibrate_global, calibrate_per_subgroup, tar_at_far, threshold_accuracy_table,
    threshold_for_far, FarOperatingPoint, Sweep, ThresholdAccuracy, ThresholdSet,
    DEFAULT_FAR_TARGETS,
};
pub use det::{det_curve, DetPoint};

/// Scores aligned with a pair list; `labels[n]` is true for genuine pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs<S> {
    pub scores: Vec<S>,
    pub labels: Vec<bool>,
}

impl<S: Scalar> ScoredPairs<S> {
    pub fn new(scores: Vec<S>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "ScoredPairs::new",
                expected: format!("{} labels", scores.len()),
                found: labels.len().to_string(),
            });
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("pair score {bad}")));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(P, N)`: genuine and imposter counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l).count();
        (p, self.labels.len() - p)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            scores: indices.iter().map(|&n| self.scores[n]).collect(),
            labels: indices.iter().map(|&n| self.labels[n]).collect(),
        }
    }
}

/// Cosine similarity of every pair, in pair order.
pub fn score_pairs<S: Scalar>(set: &EmbeddingSet<S>, pairs: &PairList) -> Result<ScoredPairs<S>> {
    let e = set.embeddings();
    let mut norms: Vec<Option<S>> = vec![None; e.len()];
    let mut norm_of = |n: usize| -> Result<S> {
        if let Some(v) = norms[n] {
            return Ok(v);
        }
        let v = scalar::norm(&e[n].vector);
        if !(v > S::zero()) {
            return Err(Error::ZeroNorm(e[n].sample_id.clone()));
        }
        norms[n] = Some(v);
        Ok(v)
    };
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs.pairs() {
        let (ni, nj) = (norm_of(p.i)?, norm_of(p.j)?);
        scores.push(scalar::dot(&e[p.i].vector, &e[p.j].vector) / (ni * nj));
    }
    ScoredPairs::new(scores, pairs.labels())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAtThreshold<S> {
    pub threshold: S,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl<S: Scalar> ConfusionAtThreshold<S> {
    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }
}

pub fn confusion<S: Scalar>(scored: &ScoredPairs<S>, threshold: S) -> ConfusionAtThreshold<S> {
    let mut c = ConfusionAtThreshold {
        threshold,
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &genuine) in scored.scores.iter().zip(&scored.labels) {
        match (s > threshold, genuine) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport<S> {
    pub fnr: S,
    pub far: S,
    pub tar: S,
    pub tnr: S,
    pub accuracy: S,
}

pub fn rates<S: Scalar>(conf: &ConfusionAtThreshold<S>) -> Result<RateReport<S>> {
    let (p, n) = (conf.positives(), conf.negatives());
    if p == 0 {
        return Err(Error::DegenerateDenominator("positive (P)"));
    }
    if n == 0 {
        return Err(Error::DegenerateDenominator("negative (N)"));
    }
    let ratio = |a: usize, b: usize| S::of(a as f64 / b as f64);
    Ok(RateReport {
        fnr: ratio(conf.fn_, p),
        far: ratio(conf.fp, n),
        tar: ratio(conf.tp, p),
        tnr: ratio(conf.tn, n),
        accuracy: ratio(conf.tp + conf.tn, p + n),
    })
}
