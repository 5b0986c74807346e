use serde::{Deserialize, Serialize};

use super::calibrate::Sweep;
use super::ScoredPairs;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One DET staircase corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub fnr: f64,
}

/// `(FAR, FNR)` at every candidate threshold, ascending in threshold, so FAR
/// falls while FNR rises. With `num_points >= 2` the staircase is thinned to
/// that many points at uniform quantiles of the candidate list, endpoints kept.
pub fn det_curve<S: Scalar>(scored: &ScoredPairs<S>, num_points: usize) -> Result<Vec<DetPoint>> {
    let (p, n) = scored.class_counts();
    if p == 0 || n == 0 {
        return Err(Error::EmptyClass("DET curve input".into()));
    }
    let sweep = Sweep::new(scored);
    let point = |t: usize| DetPoint {
        threshold: sweep.thresholds[t].as_f64(),
        far: sweep.far(t),
        fnr: (sweep.positives - sweep.tp[t]) as f64 / sweep.positives as f64,
    };
    let len = sweep.len();
    if num_points < 2 || num_points >= len {
        return Ok((0..len).map(point).collect());
    }
    let mut picks: Vec<usize> = (0..num_points)
        .map(|k| ((k as f64) * (len - 1) as f64 / (num_points - 1) as f64).round() as usize)
        .collect();
    picks.dedup();
    Ok(picks.into_iter().map(point).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(scores: &[f64], labels: &[bool]) -> ScoredPairs<f64> {
        ScoredPairs::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn separable_curve_touches_origin() {
        let s = scored(&[0.9, 0.8, 0.1, 0.0], &[true, true, false, false]);
        let curve = det_curve(&s, 0).unwrap();
        assert!(curve.iter().any(|p| p.far == 0.0 && p.fnr == 0.0));
    }

    #[test]
    fn anti_separated_curve_has_both_errors_high() {
        let s = scored(&[0.0, 0.1, 0.8, 0.9], &[true, true, false, false]);
        let curve = det_curve(&s, 0).unwrap();
        assert!(curve.iter().any(|p| p.far > 0.9 && p.fnr > 0.9));
    }

    #[test]
    fn staircase_is_monotone_and_thinning_keeps_endpoints() {
        let scores: Vec<f64> = (0..200).map(|k| ((k * 37) % 200) as f64 / 200.0).collect();
        let labels: Vec<bool> = (0..200).map(|k| k % 4 == 0).collect();
        let s = scored(&scores, &labels);
        let full = det_curve(&s, 0).unwrap();
        for w in full.windows(2) {
            assert!(w[1].far <= w[0].far && w[1].fnr >= w[0].fnr);
        }
        let thin = det_curve(&s, 10).unwrap();
        assert_eq!(thin.len(), 10);
        assert_eq!(thin[0], full[0]);
        assert_eq!(thin[9], *full.last().unwrap());
    }
}
