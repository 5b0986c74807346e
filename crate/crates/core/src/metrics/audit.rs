//! Per-subgroup FAR audit and score-distribution summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::calibrate::threshold_for_far;
use super::ScoredPairs;
use crate::embedding::SubgroupLabel;
use crate::error::{Error, Result};
use crate::pairing::PairList;
use crate::scalar::Scalar;

/// `100 × (reported − actual) / reported`: positive when the subgroup's actual
/// FAR is below the reported one.
pub fn percent_error(reported_far: f64, actual_far: f64) -> Result<f64> {
    if reported_far == 0.0 {
        return Err(Error::DegenerateDenominator("reported FAR"));
    }
    Ok(100.0 * (reported_far - actual_far) / reported_far)
}

/// `100 × (actual − reported) / reported`, the signed gap plotted per subgroup.
pub fn percent_difference(reported_far: f64, actual_far: f64) -> Result<f64> {
    if reported_far == 0.0 {
        return Err(Error::DegenerateDenominator("reported FAR"));
    }
    Ok(100.0 * (actual_far - reported_far) / reported_far)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupFar {
    pub imposters: usize,
    pub false_accepts: usize,
    pub actual_far: f64,
    pub percent_difference: f64,
    /// TAR of the subgroup at the shared threshold; absent without genuine pairs.
    pub tar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarAudit {
    pub threshold: f64,
    pub imposters: usize,
    pub false_accepts: usize,
    /// Pooled FAR at the threshold.
    pub reported_far: f64,
    pub per_subgroup: BTreeMap<SubgroupLabel, SubgroupFar>,
}

/// Every subgroup's FAR at one shared threshold, against the pooled FAR.
pub fn subgroup_far_audit<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
    threshold: S,
) -> Result<FarAudit> {
    #[derive(Default)]
    struct Counts {
        imp: usize,
        fa: usize,
        gen: usize,
        ta: usize,
    }
    let mut counts: BTreeMap<SubgroupLabel, Counts> = BTreeMap::new();
    for (n, p) in pairs.pairs().iter().enumerate() {
        let c = counts.entry(p.subgroup).or_default();
        let accepted = scored.scores[n] > threshold;
        if scored.labels[n] {
            c.gen += 1;
            c.ta += usize::from(accepted);
        } else {
            c.imp += 1;
            c.fa += usize::from(accepted);
        }
    }
    let imposters: usize = counts.values().map(|c| c.imp).sum();
    let false_accepts: usize = counts.values().map(|c| c.fa).sum();
    if imposters == 0 {
        return Err(Error::NoImposters("pooled pair set".into()));
    }
    let reported_far = false_accepts as f64 / imposters as f64;
    let mut per_subgroup = BTreeMap::new();
    for (label, c) in counts {
        if c.imp == 0 {
            return Err(Error::NoImposters(label.code()));
        }
        let actual_far = c.fa as f64 / c.imp as f64;
        per_subgroup.insert(
            label,
            SubgroupFar {
                imposters: c.imp,
                false_accepts: c.fa,
                actual_far,
                percent_difference: percent_difference(reported_far, actual_far)?,
                tar: (c.gen > 0).then(|| c.ta as f64 / c.gen as f64),
            },
        );
    }
    Ok(FarAudit {
        threshold: threshold.as_f64(),
        imposters,
        false_accepts,
        reported_far,
        per_subgroup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupThresholdFar {
    pub threshold: f64,
    pub achieved_far: f64,
    /// Gap between the achieved FAR and the target, in percent of the target.
    pub percent_difference: f64,
    pub tar: f64,
}

/// Each subgroup calibrated to `target_far` on its own pairs.
pub fn subgroup_threshold_audit<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
    target_far: f64,
) -> Result<BTreeMap<SubgroupLabel, SubgroupThresholdFar>> {
    pairs
        .indices_by_subgroup()
        .into_iter()
        .map(|(label, idx)| {
            let op = threshold_for_far(&scored.select(&idx), target_far)?;
            Ok((
                label,
                SubgroupThresholdFar {
                    threshold: op.threshold.as_f64(),
                    achieved_far: op.achieved_far,
                    percent_difference: percent_difference(target_far, op.achieved_far)?,
                    tar: op.tar,
                },
            ))
        })
        .collect()
}

/// TAR of each subgroup at a shared threshold.
pub fn subgroup_tar<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
    threshold: S,
) -> Result<BTreeMap<SubgroupLabel, f64>> {
    pairs
        .indices_by_subgroup()
        .into_iter()
        .map(|(label, idx)| {
            let (mut gen, mut acc) = (0usize, 0usize);
            for n in idx {
                if scored.labels[n] {
                    gen += 1;
                    acc += usize::from(scored.scores[n] > threshold);
                }
            }
            if gen == 0 {
                return Err(Error::EmptyClass(format!("subgroup {label}")));
            }
            Ok((label, acc as f64 / gen as f64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

impl DistributionStats {
    /// Exact order statistics: median averages the two middle values for even
    /// counts, percentiles use the nearest-rank rule.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let n = v.len();
        let rank = |p: f64| v[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            v[n / 2 - 1] + (v[n / 2] - v[n / 2 - 1]) / 2.0
        };
        Some(Self {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median,
            p5: rank(0.05),
            p95: rank(0.95),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub genuine: DistributionStats,
    pub imposter: DistributionStats,
}

pub fn score_distribution_summary<S: Scalar>(
    scored: &ScoredPairs<S>,
    pairs: &PairList,
) -> Result<BTreeMap<SubgroupLabel, ScoreSummary>> {
    pairs
        .indices_by_subgroup()
        .into_iter()
        .map(|(label, idx)| {
            let (mut gen, mut imp) = (Vec::new(), Vec::new());
            for n in idx {
                let s = scored.scores[n].as_f64();
                if scored.labels[n] {
                    gen.push(s);
                } else {
                    imp.push(s);
                }
            }
            let missing = || Error::EmptyClass(format!("subgroup {label}"));
            Ok((
                label,
                ScoreSummary {
                    genuine: DistributionStats::of(&gen).ok_or_else(missing)?,
                    imposter: DistributionStats::of(&imp).ok_or_else(missing)?,
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_metrics() {
        assert_eq!(percent_error(0.01, 0.01).unwrap(), 0.0);
        assert!((percent_difference(1e-4, 2e-4).unwrap() - 100.0).abs() < 1e-9);
        assert!((percent_difference(1e-4, 0.75e-4).unwrap() + 25.0).abs() < 1e-9);
        assert!((percent_error(1e-4, 0.75e-4).unwrap() - 25.0).abs() < 1e-9);
        assert!(percent_error(0.0, 0.1).is_err());
    }

    #[test]
    fn constant_scores_collapse_statistics() {
        let s = DistributionStats::of(&[0.3; 7]).unwrap();
        assert_eq!((s.mean, s.median, s.p5, s.p95), (0.3, 0.3, 0.3, 0.3));
    }

    #[test]
    fn five_score_quantiles_by_hand() {
        // sorted: 0.1 0.2 0.4 0.8 1.0; ceil(0.25)=1 -> 0.1, ceil(4.75)=5 -> 1.0
        let s = DistributionStats::of(&[0.8, 0.1, 1.0, 0.4, 0.2]).unwrap();
        assert_eq!(s.median, 0.4);
        assert_eq!(s.p5, 0.1);
        assert_eq!(s.p95, 1.0);
        assert!((s.mean - 0.5).abs() < 1e-15);
        let even = DistributionStats::of(&[0.1, 0.2, 0.4, 0.8]).unwrap();
        assert!((even.median - 0.3).abs() < 1e-15);
    }
}
