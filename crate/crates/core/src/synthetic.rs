//! Subgroup-labelled synthetic embeddings with controllable score bias.
//!
//! Every subgroup owns an axis; the axes are orthonormal. A subject centroid is
//! `normalize(c·axis + s·z)` and a sample is `normalize(centroid + σ·n)` with
//! `n ~ N(0, I/d)`. The subject offset `z` is a unit-variance Gaussian either
//! over the whole space or, when `identity_dim` is set, inside a subspace of
//! that dimension orthogonal to every axis. Here `c` is the axis
//! concentration, `s` the centre spread and `σ` the within-subject noise.
//! Larger `σ` lowers genuine scores; larger `c` raises same-subgroup imposter
//! scores, which is what makes a single pooled threshold unfair.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{assign_folds, EmbeddingSet, Provenance, RawEmbedding, SubgroupLabel, SubgroupScheme};
use crate::error::{Error, Result};
use crate::metrics::{score_pairs, threshold_accuracy_table};
use crate::pairing::{build_pairs, PairPolicy};
use crate::rng::{seeded, Rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupProfile {
    pub subgroup: SubgroupLabel,
    pub center_spread: f64,
    pub within_subject_noise: f64,
    pub subgroup_axis_concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub subjects_per_subgroup: usize,
    pub samples_per_subject: usize,
    pub profiles: Vec<SubgroupProfile>,
    pub seed: u64,
    /// Dimension of the subspace holding subject identity; `None` uses all of `dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_dim: Option<usize>,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects_per_subgroup == 0 || self.samples_per_subject == 0 {
            return Err(Error::InvalidConfig("subject and sample counts must be at least 1".into()));
        }
        if self.profiles.is_empty() {
            return Err(Error::InvalidConfig("at least one subgroup profile is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.profiles {
            if !seen.insert(p.subgroup) {
                return Err(Error::InvalidConfig(format!("subgroup {} declared twice", p.subgroup)));
            }
            let knobs = [p.center_spread, p.within_subject_noise, p.subgroup_axis_concentration];
            if knobs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig(format!(
                    "profile {} has a negative or non-finite knob",
                    p.subgroup
                )));
            }
            if p.center_spread == 0.0 && p.subgroup_axis_concentration == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "profile {} places every centroid at the origin",
                    p.subgroup
                )));
            }
        }
        if self.dim < self.profiles.len() {
            return Err(Error::InvalidConfig(format!(
                "dim {} cannot hold {} orthogonal subgroup axes",
                self.dim,
                self.profiles.len()
            )));
        }
        if let Some(k) = self.identity_dim {
            if k == 0 || k + self.profiles.len() > self.dim {
                return Err(Error::InvalidConfig(format!(
                    "identity_dim {k} must be positive and fit beside {} axes in dim {}",
                    self.profiles.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.profiles.len() * self.subjects_per_subgroup * self.samples_per_subject
    }

    pub fn scheme(&self) -> Result<SubgroupScheme> {
        SubgroupScheme::new(
            self.profiles.iter().map(|p| p.subgroup.gender).collect(),
            self.profiles.iter().map(|p| p.subgroup.ethnicity).collect(),
        )
    }
}

fn gaussian(d: usize, rng: &mut Rng) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    (0..d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        })
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Unit vectors from Gaussian draws orthonormalised by a Gram-Schmidt sweep in draw order.
fn orthonormal_axes(count: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(count);
    while axes.len() < count {
        let mut v = gaussian(d, rng);
        for a in &axes {
            let proj: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= proj * y);
        }
        // a draw (numerically) inside the span is redrawn
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6 {
            axes.push(normalized(v));
        }
    }
    axes
}

/// Generates the set described by `config`. Subject keys are global subject
/// numbers; sample ids are `{subject}_{sample}`. Vectors are unit-norm and
/// exactly representable in `f32`, so binary files round-trip them.
pub fn generate<S: Scalar>(config: &SyntheticConfig) -> Result<EmbeddingSet<S>> {
    config.validate()?;
    let d = config.dim;
    let mut rng = seeded(config.seed, Stream::Synthetic);
    let groups = config.profiles.len();
    let basis = orthonormal_axes(groups + config.identity_dim.unwrap_or(0), d, &mut rng);
    let (axes, identity) = basis.split_at(groups);
    let offset = |rng: &mut Rng| -> Vec<f64> {
        if identity.is_empty() {
            return gaussian(d, rng);
        }
        let g = gaussian(identity.len(), rng);
        let mut z = vec![0.0; d];
        for (w, b) in g.iter().zip(identity) {
            z.iter_mut().zip(b).for_each(|(z, b)| *z += w * b);
        }
        z
    };
    let mut rows = Vec::with_capacity(config.num_samples());
    let mut subject = 0usize;
    for (p, axis) in config.profiles.iter().zip(axes) {
        for _ in 0..config.subjects_per_subgroup {
            let z = offset(&mut rng);
            let centroid = normalized(
                axis.iter()
                    .zip(&z)
                    .map(|(a, z)| p.subgroup_axis_concentration * a + p.center_spread * z)
                    .collect(),
            );
            for n in 0..config.samples_per_subject {
                let noise = gaussian(d, &mut rng);
                let x = normalized(
                    centroid
                        .iter()
                        .zip(&noise)
                        .map(|(c, e)| c + p.within_subject_noise * e)
                        .collect(),
                );
                rows.push(RawEmbedding {
                    sample_id: format!("{subject:05}_{n:03}"),
                    subject_key: subject.to_string(),
                    subgroup: p.subgroup,
                    vector: x.into_iter().map(|v| S::of(v as f32 as f64)).collect(),
                });
            }
            subject += 1;
        }
    }
    EmbeddingSet::from_raw(rows, Some(config.scheme()?), Provenance::Synthetic)
}

/// Subgroups in the order the default config grades them, noisiest first.
const DEFAULT_ORDER: [&str; 8] = ["AF", "BF", "WF", "AM", "BM", "WM", "IF", "IM"];
const DEFAULT_NOISE: [f64; 8] = [1.3, 1.2, 1.1, 1.0, 0.95, 0.9, 0.85, 0.8];
/// Subject identity lives in 16 of the 64 dimensions; the rest is noise, so a
/// `d/2` projection can keep all of it.
const DEFAULT_IDENTITY_DIM: usize = 16;
/// Smallest per-subgroup Acc@t_g spread the default config must produce.
pub const MIN_ACCURACY_SPREAD: f64 = 0.04;
const MAX_SEED_SCAN: u64 = 64;

/// The default biased config before the seed scan.
///
/// Noise is graded across subgroups. Axis concentration shrinks with noise
/// so that the identity-bearing share of each sample, `s / sqrt(c² + s²)`,
/// grows with `σ^0.3`: removing the subgroup axes then narrows the gap between
/// subgroups' genuine scores instead of leaving it untouched.
pub fn biased_config_unchecked(seed: u64) -> SyntheticConfig {
    let spread = 1.0;
    let sigma_max = DEFAULT_NOISE[0];
    let mut profiles: Vec<SubgroupProfile> = DEFAULT_ORDER
        .iter()
        .zip(DEFAULT_NOISE)
        .map(|(code, sigma)| {
            let radius = 1.2 * spread * (sigma_max / sigma).powf(0.3);
            let c = (radius * radius - spread * spread).sqrt();
            SubgroupProfile {
                subgroup: code.parse().expect("valid code"),
                center_spread: spread,
                within_subject_noise: sigma,
                subgroup_axis_concentration: (c * 1e4).round() / 1e4,
            }
        })
        .collect();
    profiles.sort_by_key(|p| p.subgroup);
    SyntheticConfig {
        dim: 64,
        subjects_per_subgroup: 20,
        samples_per_subject: 10,
        profiles,
        seed,
        identity_dim: Some(DEFAULT_IDENTITY_DIM),
    }
}

/// Per-subgroup accuracy at the pooled accuracy-optimal threshold, using
/// five subject-disjoint folds and the default pair policy on `seed`.
pub fn accuracy_at_global_threshold<S: Scalar>(
    set: &EmbeddingSet<S>,
    seed: u64,
) -> Result<Vec<(SubgroupLabel, f64)>> {
    let folds = assign_folds(set, 5, seed)?;
    let pairs = build_pairs(set, &folds, &PairPolicy { seed, ..PairPolicy::default() })?;
    let table = threshold_accuracy_table(&score_pairs(set, &pairs)?, &pairs)?;
    Ok(table
        .per_subgroup
        .iter()
        .map(|(&l, a)| (l, a.accuracy_global))
        .collect())
}

/// An 8-subgroup, 64-dimensional config with 20 subjects × 10 samples per
/// subgroup whose pooled threshold leaves per-subgroup accuracies at least
/// [`MIN_ACCURACY_SPREAD`] apart. Seeds are scanned upward from `seed` until
/// the generated set passes that check.
pub fn default_biased_config(seed: u64) -> Result<SyntheticConfig> {
    for s in seed..seed.saturating_add(MAX_SEED_SCAN) {
        let config = biased_config_unchecked(s);
        let set = generate::<f64>(&config)?;
        let acc: Vec<f64> = accuracy_at_global_threshold(&set, s)?.into_iter().map(|(_, a)| a).collect();
        let (lo, hi) = acc
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
        if hi - lo >= MIN_ACCURACY_SPREAD {
            return Ok(config);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no seed in {seed}..{} produced an accuracy spread of {MIN_ACCURACY_SPREAD}",
        seed.saturating_add(MAX_SEED_SCAN)
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{dot, norm};

    fn two_group(noise: [f64; 2], subjects: usize, samples: usize) -> SyntheticConfig {
        SyntheticConfig {
            dim: 32,
            subjects_per_subgroup: subjects,
            samples_per_subject: samples,
            profiles: ["AF", "AM"]
                .iter()
                .zip(noise)
                .map(|(c, n)| SubgroupProfile {
                    subgroup: c.parse().unwrap(),
                    center_spread: 1.0,
                    within_subject_noise: n,
                    subgroup_axis_concentration: 0.5,
                })
                .collect(),
            seed: 3,
            identity_dim: None,
        }
    }

    fn mean_genuine(set: &EmbeddingSet<f64>, group: &str) -> f64 {
        let e = set.embeddings();
        let g: SubgroupLabel = group.parse().unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                if e[i].subgroup == g && e[i].subject_id == e[j].subject_id {
                    sum += dot(&e[i].vector, &e[j].vector);
                    n += 1;
                }
            }
        }
        sum / n as f64
    }

    #[test]
    fn zero_noise_collapses_subjects() {
        let set = generate::<f64>(&two_group([0.0, 0.0], 5, 4)).unwrap();
        let e = set.embeddings();
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                if e[i].subject_id == e[j].subject_id {
                    assert!((dot(&e[i].vector, &e[j].vector) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn noisier_subgroup_has_lower_genuine_mean() {
        let set = generate::<f64>(&two_group([0.3, 0.9], 50, 10)).unwrap();
        assert!(mean_genuine(&set, "AM") < mean_genuine(&set, "AF"));
    }

    #[test]
    fn cross_subgroup_imposters_centre_on_zero() {
        let mut config = two_group([0.1, 0.1], 30, 3);
        config.dim = 64;
        let set = generate::<f64>(&config).unwrap();
        let e = set.embeddings();
        let mut scores = Vec::new();
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                if e[i].subgroup != e[j].subgroup {
                    scores.push(dot(&e[i].vector, &e[j].vector));
                }
            }
        }
        scores.sort_by(|a, b| a.total_cmp(b));
        let median = scores[scores.len() / 2];
        assert!(median.abs() <= 0.15, "median {median}");
    }

    #[test]
    fn output_is_unit_norm_and_deterministic() {
        let config = two_group([0.5, 0.7], 4, 3);
        let a = generate::<f64>(&config).unwrap();
        assert!(a.embeddings().iter().all(|e| (norm(&e.vector) - 1.0).abs() < 1e-6));
        assert_eq!(a, generate::<f64>(&config).unwrap());
    }

    #[test]
    fn rejects_too_small_dimension() {
        let mut config = biased_config_unchecked(0);
        config.dim = 7;
        assert!(matches!(generate::<f64>(&config), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_duplicate_profiles() {
        let mut config = two_group([0.5, 0.5], 2, 2);
        config.profiles[1].subgroup = config.profiles[0].subgroup;
        assert!(config.validate().is_err());
    }

    #[test]
    fn default_counts() {
        let config = default_biased_config(0).unwrap();
        assert_eq!(config.profiles.len(), 8);
        assert_eq!(config.profiles.len() * config.subjects_per_subgroup, 160);
        assert_eq!(config.num_samples(), 1600);
        assert_eq!(config.dim, 64);
        let set = generate::<f64>(&config).unwrap();
        assert_eq!(set.len(), 1600);
        assert_eq!(set.num_identities(), 160);
    }

    #[test]
    fn default_config_is_biased_against_the_noisiest_subgroup() {
        let config = default_biased_config(0).unwrap();
        let set = generate::<f64>(&config).unwrap();
        let acc = accuracy_at_global_threshold(&set, config.seed).unwrap();
        let (lo, hi) = acc.iter().fold((1.0f64, 0.0f64), |(lo, hi), &(_, a)| (lo.min(a), hi.max(a)));
        assert!(hi - lo >= MIN_ACCURACY_SPREAD);
        let noisiest = config
            .profiles
            .iter()
            .max_by(|a, b| a.within_subject_noise.total_cmp(&b.within_subject_noise))
            .unwrap()
            .subgroup;
        let worst = acc.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert_eq!(worst, noisiest, "{acc:?}");
    }

    #[test]
    fn config_json_round_trip() {
        let config = biased_config_unchecked(11);
        let json = serde_json::to_string(&config).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticConfig>(&json).unwrap(), config);
    }
}
