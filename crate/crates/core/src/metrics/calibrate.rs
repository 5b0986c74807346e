//! Threshold sweeps and calibration.
//!
//! Candidate thresholds are one sentinel below the smallest score, the
//! midpoint between every pair of consecutive distinct scores, and one sentinel
//! above the largest score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoredPairs;
use crate::embedding::SubgroupLabel;
use crate::error::{Error, Result};
use crate::pairing::{PairList, Split};
use crate::scalar::Scalar;

/// FAR operating points reported by default.
pub const DEFAULT_FAR_TARGETS: [f64; 5] = [0.3, 0.1, 0.01, 0.001, 0.0001];

/// Accept counts at every candidate threshold, thresholds ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep<S> {
    pub thresholds: Vec<S>,
    /// Genuine pairs scoring above each threshold.
    pub tp: Vec<usize>,
    /// Imposter pairs scoring above each threshold.
    pub fp: Vec<usize>,
    pub positives: usize,
    pub negatives: usize,
}

fn midpoint<S: Scalar>(a: S, b: S) -> S {
    let m = a + (b - a) / S::of(2.0);
    // must stay strictly below b or b would be rejected
    if m < b {
        m
    } else {
        a
    }
}

impl<S: Scalar> Sweep<S> {
    pub fn new(scored: &ScoredPairs<S>) -> Self {
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored.scores[a].partial_cmp(&scored.scores[b]).expect("finite"));
        // distinct values ascending with their per-class counts
        let mut values: Vec<S> = Vec::new();
        let mut gen: Vec<usize> = Vec::new();
        let mut imp: Vec<usize> = Vec::new();
        for &n in &order {
            let s = scored.scores[n];
            if values.last() != Some(&s) {
                values.push(s);
                gen.push(0);
                imp.push(0);
            }
            let last = values.len() - 1;
            if scored.labels[n] {
                gen[last] += 1;
            } else {
                imp[last] += 1;
            }
        }
        let (positives, negatives) = scored.class_counts();
        let m = values.len();
        let mut thresholds = Vec::with_capacity(m + 1);
        let mut tp = Vec::with_capacity(m + 1);
        let mut fp = Vec::with_capacity(m + 1);
        if m == 0 {
            return Self {
                thresholds: vec![S::zero()],
                tp: vec![0],
                fp: vec![0],
                positives,
                negatives,
            };
        }
        let (mut above_g, mut above_i) = (positives, negatives);
        thresholds.push(values[0] - S::one());
        tp.push(above_g);
        fp.push(above_i);
        for t in 0..m {
            above_g -= gen[t];
            above_i -= imp[t];
            thresholds.push(if t + 1 < m {
                midpoint(values[t], values[t + 1])
            } else {
                values[m - 1] + S::one()
            });
            tp.push(above_g);
            fp.push(above_i);
        }
        Self {
            thresholds,
            tp,
            fp,
            positives,
            negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn correct(&self, t: usize) -> usize {
        self.tp[t] + (self.negatives - self.fp[t])
    }

    pub fn far(&self, t: usize) -> f64 {
        self.fp[t] as f64 / self.negatives as f64
    }

    pub fn tar(&self, t: usize) -> f64 {
        self.tp[t] as f64 / self.positives as f64
    }
}

fn require_both_classes<S: Scalar>(scored: &ScoredPairs<S>, what: &str) -> Result<()> {
    let (p, n) = scored.class_counts();
    if p == 0 || n == 0 {
        return Err(Error::EmptyClass(what.to_string()));
    }
    Ok(())
}

/// Accuracy-maximizing threshold; ties go to the smallest threshold.
pub fn calibrate_global<S: Scalar>(scored: &ScoredPairs<S>) -> Result<S> {
    require_both_classes(scored, "pooled pair set")?;
    let sweep = Sweep::new(scored);
    let mut best = 0;
    for t in 1..sweep.len() {
        if sweep.correct(t) > sweep.correct(best) {
            best = t;
        }
    }
    Ok(sweep.thresholds[best])
}

/// Global threshold `t_g` plus per-subgroup optimal thresholds `t_o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet<S> {
    pub global: S,
    pub per_subgroup: BTreeMap<SubgroupLabel, S>,
}

pub fn calibrate_per_subgroup<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
) -> Result<ThresholdSet<S>> {
    let global = calibrate_global(scored)?;
    let mut per_subgroup = BTreeMap::new();
    for (label, idx) in pairs.indices_by_subgroup() {
        let sub = scored.select(&idx);
        require_both_classes(&sub, &format!("subgroup {label}"))?;
        per_subgroup.insert(label, calibrate_global(&sub)?);
    }
    Ok(ThresholdSet {
        global,
        per_subgroup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarOperatingPoint<S> {
    pub target_far: f64,
    pub threshold: S,
    pub achieved_far: f64,
    pub tar: f64,
}

/// Smallest candidate threshold whose empirical FAR does not exceed `target_far`.
///
/// FAR only takes values `k / N`, so when no step lands between 1 and the
/// target the result is the candidate just above the highest imposter score
/// (the above-max sentinel when an imposter holds the top score), with FAR 0.
pub fn threshold_for_far<S: Scalar>(
    scored: &ScoredPairs<S>,
    target_far: f64,
) -> Result<FarOperatingPoint<S>> {
    if !(target_far > 0.0 && target_far < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target FAR must lie in (0, 1), got {target_far}"
        )));
    }
    let (p, n) = scored.class_counts();
    if (n as f64) * target_far < 1.0 - 1e-9 {
        return Err(Error::UnreachableFar {
            target: target_far,
            imposters: n,
            needed: (1.0 / target_far).ceil() as usize,
        });
    }
    if p == 0 {
        return Err(Error::EmptyClass("genuine pairs for TAR".into()));
    }
    let sweep = Sweep::new(scored);
    let t = (0..sweep.len())
        .find(|&t| sweep.far(t) <= target_far)
        .expect("the above-max sentinel has FAR 0");
    Ok(FarOperatingPoint {
        target_far,
        threshold: sweep.thresholds[t],
        achieved_far: sweep.far(t),
        tar: sweep.tar(t),
    })
}

/// TAR at the FAR-calibrated threshold for each target.
pub fn tar_at_far<S: Scalar>(scored: &ScoredPairs<S>, fars: &[f64]) -> Result<Vec<f64>> {
    fars.iter()
        .map(|&f| threshold_for_far(scored, f).map(|op| op.tar))
        .collect()
}

/// Accuracy at `t_g` and at `t_o` per subgroup, fitted on train folds and
/// counted on the held-out fold. A single-fold pair list is fitted and counted
/// on itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    /// Mean fitted `t_g` over folds.
    pub global_threshold: f64,
    pub per_subgroup: BTreeMap<SubgroupLabel, SubgroupAccuracy>,
    pub accuracy_global: f64,
    pub accuracy_optimal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAccuracy {
    pub accuracy_global: f64,
    /// Mean fitted `t_o` over folds.
    pub optimal_threshold: f64,
    pub accuracy_optimal: f64,
}

pub fn threshold_accuracy_table<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
) -> Result<ThresholdAccuracy> {
    #[derive(Default, Clone, Copy)]
    struct Tally {
        total: usize,
        correct_g: usize,
        correct_o: usize,
        t_o_sum: f64,
    }
    let folds = pairs.num_folds();
    let labels = pairs.subgroups();
    let mut tally: BTreeMap<SubgroupLabel, Tally> =
        labels.iter().map(|&l| (l, Tally::default())).collect();
    let mut t_g_sum = 0.0;
    let all: Vec<usize> = (0..pairs.len()).collect();
    for fold in 0..folds {
        let (fit, eval) = if folds == 1 {
            (all.clone(), all.clone())
        } else {
            let split = |s: Split| -> Vec<usize> {
                (0..pairs.len())
                    .filter(|&n| (pairs.fold_of_pair()[n] == fold) == (s == Split::Test))
                    .collect()
            };
            (split(Split::Train), split(Split::Test))
        };
        let fit_pairs = pairs.select(&fit);
        let thresholds = calibrate_per_subgroup(&scored.select(&fit), &fit_pairs)?;
        t_g_sum += thresholds.global.as_f64();
        for n in eval {
            let p = pairs.pairs()[n];
            let s = scored.scores[n];
            let genuine = scored.labels[n];
            let t_o = *thresholds
                .per_subgroup
                .get(&p.subgroup)
                .ok_or_else(|| Error::EmptyClass(format!("subgroup {} in fold {fold}", p.subgroup)))?;
            let entry = tally.get_mut(&p.subgroup).expect("listed");
            entry.total += 1;
            entry.correct_g += usize::from((s > thresholds.global) == genuine);
            entry.correct_o += usize::from((s > t_o) == genuine);
        }
        for (label, t) in &thresholds.per_subgroup {
            tally.get_mut(label).expect("listed").t_o_sum += t.as_f64();
        }
    }
    let total: usize = tally.values().map(|t| t.total).sum();
    let correct_g: usize = tally.values().map(|t| t.correct_g).sum();
    let correct_o: usize = tally.values().map(|t| t.correct_o).sum();
    Ok(ThresholdAccuracy {
        global_threshold: t_g_sum / folds as f64,
        per_subgroup: tally
            .into_iter()
            .map(|(l, t)| {
                (
                    l,
                    SubgroupAccuracy {
                        accuracy_global: t.correct_g as f64 / t.total as f64,
                        optimal_threshold: t.t_o_sum / folds as f64,
                        accuracy_optimal: t.correct_o as f64 / t.total as f64,
                    },
                )
            })
            .collect(),
        accuracy_global: correct_g as f64 / total as f64,
        accuracy_optimal: correct_o as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::confusion;

    fn scored(scores: &[f64], labels: &[bool]) -> ScoredPairs<f64> {
        ScoredPairs::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    fn accuracy(s: &ScoredPairs<f64>, t: f64) -> f64 {
        let c = confusion(s, t);
        (c.tp + c.tn) as f64 / s.len() as f64
    }

    #[test]
    fn separable_scores_reach_full_accuracy() {
        let s = scored(&[0.9, 0.8, 0.7, 0.2, 0.1, -0.3], &[true, true, true, false, false, false]);
        let t = calibrate_global(&s).unwrap();
        assert_eq!(accuracy(&s, t), 1.0);
        assert!((t - 0.45).abs() < 1e-15);
    }

    #[test]
    fn two_point_case() {
        let s = scored(&[0.9, 0.1], &[true, false]);
        let t = calibrate_global(&s).unwrap();
        assert!(t > 0.1 && t < 0.9);
        assert_eq!(accuracy(&s, t), 1.0);
    }

    #[test]
    fn empty_class_is_an_error() {
        let s = scored(&[0.9, 0.1], &[true, true]);
        assert!(matches!(calibrate_global(&s), Err(Error::EmptyClass(_))));
    }

    #[test]
    fn ties_take_smallest_threshold() {
        // accepting both or neither genuine above a middle imposter ties at 2/3 correct
        let s = scored(&[0.2, 0.5, 0.8], &[false, true, false]);
        let t = calibrate_global(&s).unwrap();
        assert!((t - 0.35).abs() < 1e-15, "{t}");
    }

    #[test]
    fn far_threshold_is_tight() {
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|k| (k as f64 * 0.618_034).fract() * 2.0 - 1.0).chain([0.99]).collect();
        let labels: Vec<bool> = (0..n).map(|_| false).chain([true]).collect();
        let s = scored(&scores, &labels);
        let op = threshold_for_far(&s, 0.01).unwrap();
        assert!(op.achieved_far <= 0.01);
        let sweep = Sweep::new(&s);
        let t = sweep.thresholds.iter().position(|&x| x == op.threshold).unwrap();
        assert!(sweep.far(t - 1) > 0.01);
    }

    #[test]
    fn far_half_on_symmetric_scores_lands_near_median() {
        let imp: Vec<f64> = (0..101).map(|k| -0.5 + k as f64 * 0.01).collect();
        let labels = vec![false; imp.len()];
        let mut scores = imp.clone();
        scores.push(0.9);
        let mut labels = labels;
        labels.push(true);
        let op = threshold_for_far(&scored(&scores, &labels), 0.5).unwrap();
        assert!((op.threshold - 0.0).abs() < 0.011, "{}", op.threshold);
    }

    #[test]
    fn coarse_far_falls_back_to_sentinel() {
        // every imposter shares the top score: FAR jumps straight from 1 to 0
        let s = scored(&[0.9, 0.9, 0.9, 0.3], &[false, false, false, true]);
        let op = threshold_for_far(&s, 0.5).unwrap();
        assert_eq!(op.achieved_far, 0.0);
        assert!((op.threshold - 1.9).abs() < 1e-12);
        assert_eq!(op.tar, 0.0);
    }

    #[test]
    fn unreachable_far_is_an_error() {
        let s = scored(&[0.9, 0.1, 0.2], &[true, false, false]);
        assert!(matches!(
            threshold_for_far(&s, 0.01),
            Err(Error::UnreachableFar { imposters: 2, needed: 100, .. })
        ));
    }

    #[test]
    fn separable_tar_is_one_everywhere() {
        let mut scores: Vec<f64> = (0..20_000).map(|k| -0.9 + k as f64 * 1e-5).collect();
        let mut labels = vec![false; scores.len()];
        scores.extend([0.95, 0.97]);
        labels.extend([true, true]);
        let tars = tar_at_far(&scored(&scores, &labels), &DEFAULT_FAR_TARGETS).unwrap();
        assert!(tars.iter().all(|&t| t == 1.0));
    }
}
