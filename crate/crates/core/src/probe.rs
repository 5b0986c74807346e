//! Subgroup probe: how much subgroup information survives in a feature set.
//!
//! An MLP is trained per fold to predict the subgroup of each sample and is
//! scored on the held-out fold. High held-out accuracy means the features
//! leak subgroup; chance accuracy means they do not.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, FoldAssignment, SubgroupLabel};
use crate::error::{Error, Result};
use crate::nn::{
    softmax_xent, Dense, Dropout, Layer, Mode, Optimizer, OptimizerConfig, Parameterized, PlateauConfig,
    PlateauEvent, PlateauSchedule, Relu, Sequential, Tensor2,
};
use crate::rng::{seeded, Stream};
use crate::scalar::Scalar;

/// Widths of the three hidden layers.
pub const HIDDEN: [usize; 3] = [512, 512, 256];
/// Dropout probability after every hidden layer.
pub const DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Training stops early once the epoch-mean loss plateaus under this rule.
    pub early_stop: PlateauConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            early_stop: PlateauConfig {
                max_decays: 0,
                ..PlateauConfig::default()
            },
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("probe epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("probe lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// `d → 512 → 512 → 256 → K`, ReLU and dropout after each hidden layer.
pub fn build_probe<S: Scalar>(d: usize, classes: usize, seed: u64) -> Result<Sequential<S>> {
    if d == 0 || classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "probe needs d > 0 and at least 2 classes, got d={d}, K={classes}"
        )));
    }
    let mut rng = seeded(seed, Stream::Init);
    let mut layers = Vec::new();
    let mut width = d;
    for &h in &HIDDEN {
        layers.push(Layer::Dense(Dense::glorot(width, h, &mut rng)));
        layers.push(Layer::Relu(Relu::new()));
        layers.push(Layer::Dropout(Dropout::new(DROPOUT)?));
        width = h;
    }
    layers.push(Layer::Dense(Dense::glorot(width, classes, &mut rng)));
    Ok(Sequential::new(layers))
}

/// Features, folds and targets for one probe experiment.
///
/// With fold views, fold `k` trains and tests on `views[k]`, the whole set as
/// embedded by the model trained without fold `k`. A single view serves all
/// folds.
#[derive(Debug, Clone)]
pub struct ProbeTask<'a, S> {
    views: Vec<&'a EmbeddingSet<S>>,
    folds: &'a FoldAssignment,
    labels: Vec<usize>,
    classes: Vec<SubgroupLabel>,
}

impl<'a, S: Scalar> ProbeTask<'a, S> {
    pub fn new(set: &'a EmbeddingSet<S>, folds: &'a FoldAssignment) -> Result<Self> {
        Self::build(vec![set], folds)
    }

    pub fn with_fold_views(views: &'a [EmbeddingSet<S>], folds: &'a FoldAssignment) -> Result<Self> {
        if views.len() != folds.num_folds() {
            return Err(Error::InvalidArgument(format!(
                "{} fold views for {} folds",
                views.len(),
                folds.num_folds()
            )));
        }
        Self::build(views.iter().collect(), folds)
    }

    fn build(views: Vec<&'a EmbeddingSet<S>>, folds: &'a FoldAssignment) -> Result<Self> {
        let first = views[0];
        folds.validate(first)?;
        for (k, v) in views.iter().enumerate().skip(1) {
            let same = v.dim() == first.dim()
                && v.len() == first.len()
                && v.embeddings().iter().zip(first.embeddings()).all(|(a, b)| {
                    a.sample_id == b.sample_id && a.subject_id == b.subject_id && a.subgroup == b.subgroup
                });
            if !same {
                return Err(Error::InvalidArgument(format!(
                    "fold view {k} does not list the same samples as view 0"
                )));
            }
        }
        let classes = first.scheme().labels();
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("probe needs at least 2 subgroups".into()));
        }
        let labels = (0..first.len()).map(|i| first.subgroup_index(i)).collect();
        Ok(Self {
            views,
            folds,
            labels,
            classes,
        })
    }

    /// Randomly permutes the targets across samples, destroying any link
    /// between features and subgroup.
    pub fn shuffled_labels(mut self, seed: u64) -> Self {
        self.labels.shuffle(&mut seeded(seed, Stream::Labels));
        self
    }

    pub fn view(&self, fold: usize) -> &'a EmbeddingSet<S> {
        self.views[fold.min(self.views.len() - 1)]
    }

    pub fn folds(&self) -> &FoldAssignment {
        self.folds
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[SubgroupLabel] {
        &self.classes
    }

    fn split(&self, fold: usize, held_out: bool) -> (Tensor2<S>, Vec<usize>) {
        let view = self.view(fold);
        let rows = self.folds.sample_indices(view, fold, held_out);
        let dim = view.dim();
        let mut x = Vec::with_capacity(rows.len() * dim);
        for &i in &rows {
            x.extend_from_slice(&view.embeddings()[i].vector);
        }
        let y = rows.iter().map(|&i| self.labels[i]).collect();
        (Tensor2::new(rows.len(), dim, x).expect("rows of equal width"), y)
    }
}

/// A trained probe for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFold<S> {
    pub fold: usize,
    pub model: Sequential<S>,
    pub epochs_run: usize,
    pub final_loss: f64,
}

/// Trains the probe of `fold` on the other folds' samples.
pub fn train_probe_fold<S: Scalar>(task: &ProbeTask<'_, S>, fold: usize, config: &ProbeConfig) -> Result<ProbeFold<S>> {
    config.validate()?;
    if fold >= task.folds.num_folds() {
        return Err(Error::InvalidArgument(format!("fold {fold} out of range")));
    }
    let (x, y) = task.split(fold, false);
    if y.is_empty() {
        return Err(Error::EmptyClass(format!("no training samples outside fold {fold}")));
    }
    let seed = config.seed.wrapping_add(fold as u64);
    let mut model = build_probe::<S>(x.cols(), task.classes.len(), seed)?;
    let mut optimizer = Optimizer::new(OptimizerConfig::adam(config.lr))?;
    let mut plateau = PlateauSchedule::new(config.early_stop);
    let mut order_rng = seeded(seed, Stream::Batches);
    let mut dropout_rng = seeded(seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let (mut epochs_run, mut final_loss) = (0, f64::NAN);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        for rows in order.chunks(config.batch_size) {
            let xb = x.gather_rows(rows);
            let yb: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
            model.zero_grad();
            let logits = model.forward(&xb, Mode::Train, &mut dropout_rng)?;
            let out = softmax_xent(&logits, &yb).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("probe fold {fold}, epoch {epoch}: {what}")),
                other => other,
            })?;
            model.backward(&out.grad)?;
            optimizer.step(model.params())?;
            sum += out.loss.as_f64() * rows.len() as f64;
        }
        epochs_run = epoch;
        final_loss = sum / y.len() as f64;
        if plateau.observe(final_loss) == PlateauEvent::Exhausted {
            break;
        }
    }
    Ok(ProbeFold {
        fold,
        model,
        epochs_run,
        final_loss,
    })
}

/// Trains one probe per fold, in fold order.
pub fn train_probe<S: Scalar>(task: &ProbeTask<'_, S>, config: &ProbeConfig) -> Result<Vec<ProbeFold<S>>> {
    (0..task.folds.num_folds()).map(|f| train_probe_fold(task, f, config)).collect()
}

/// Precision, recall and F1 of one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub subgroup: SubgroupLabel,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pooled held-out results of a probe.
///
/// `counts[t][p]` counts samples of true class `t` predicted as `p`;
/// `confusion` is the same matrix with each row divided by its total.
/// Classes without samples keep an all-zero row. A class that is never
/// predicted has precision 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub subgroups: Vec<SubgroupLabel>,
    pub counts: Vec<Vec<u64>>,
    pub confusion: Vec<Vec<f64>>,
    pub per_subgroup: Vec<ClassScores>,
    pub accuracy: f64,
    /// Macro averages over subgroups with samples.
    pub average: AverageScores,
}

impl ProbeReport {
    pub fn from_counts(subgroups: Vec<SubgroupLabel>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = subgroups.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch {
                op: "probe confusion",
                expected: format!("{k}x{k}"),
                found: format!("{} rows", counts.len()),
            });
        }
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyClass("probe confusion has no samples".into()));
        }
        let correct: u64 = (0..k).map(|i| counts[i][i]).sum();
        let confusion = counts
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                    .collect()
            })
            .collect();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let per_subgroup: Vec<ClassScores> = (0..k)
            .map(|c| {
                let tp = counts[c][c];
                let support: u64 = counts[c].iter().sum();
                let predicted: u64 = counts.iter().map(|r| r[c]).sum();
                let (precision, recall) = (ratio(tp, predicted), ratio(tp, support));
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassScores {
                    subgroup: subgroups[c],
                    support,
                    precision,
                    recall,
                    f1,
                }
            })
            .collect();
        let present: Vec<&ClassScores> = per_subgroup.iter().filter(|s| s.support > 0).collect();
        let mean = |f: fn(&ClassScores) -> f64| present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64;
        let average = AverageScores {
            precision: mean(|s| s.precision),
            recall: mean(|s| s.recall),
            f1: mean(|s| s.f1),
        };
        Ok(Self {
            subgroups,
            counts,
            confusion,
            per_subgroup,
            accuracy: correct as f64 / total as f64,
            average,
        })
    }

    /// Row-normalized confusion as CSV, true subgroup down, predicted across.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for s in &self.subgroups {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        for (s, row) in self.subgroups.iter().zip(&self.confusion) {
            let _ = write!(out, "{s}");
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scores each sample with the probe of its own held-out fold and pools the
/// predictions.
pub fn evaluate_probe<S: Scalar>(task: &ProbeTask<'_, S>, models: &[ProbeFold<S>]) -> Result<ProbeReport> {
    let n_folds = task.folds.num_folds();
    if models.len() != n_folds || models.iter().enumerate().any(|(i, m)| m.fold != i) {
        return Err(Error::InvalidArgument(format!(
            "expected one probe per fold in order 0..{n_folds}, got {} models",
            models.len()
        )));
    }
    let k = task.classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for m in models {
        let (x, y) = task.split(m.fold, true);
        if y.is_empty() {
            continue;
        }
        let pred = m.model.infer(&x)?.argmax_rows();
        for (&t, &p) in y.iter().zip(&pred) {
            counts[t][p] += 1;
        }
    }
    ProbeReport::from_counts(task.classes.clone(), counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupGap {
    pub subgroup: SubgroupLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Baseline minus debiased scores; positive values mean privacy gained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyGap {
    pub accuracy: f64,
    pub average: AverageScores,
    pub per_subgroup: Vec<SubgroupGap>,
}

pub fn privacy_gap(baseline: &ProbeReport, debiased: &ProbeReport) -> Result<PrivacyGap> {
    if baseline.subgroups != debiased.subgroups {
        return Err(Error::InvalidArgument(format!(
            "probe reports cover different subgroups ({} vs {})",
            baseline.subgroups.len(),
            debiased.subgroups.len()
        )));
    }
    Ok(PrivacyGap {
        accuracy: baseline.accuracy - debiased.accuracy,
        average: AverageScores {
            precision: baseline.average.precision - debiased.average.precision,
            recall: baseline.average.recall - debiased.average.recall,
            f1: baseline.average.f1 - debiased.average.f1,
        },
        per_subgroup: baseline
            .per_subgroup
            .iter()
            .zip(&debiased.per_subgroup)
            .map(|(b, d)| SubgroupGap {
                subgroup: b.subgroup,
                precision: b.precision - d.precision,
                recall: b.recall - d.recall,
                f1: b.f1 - d.f1,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{assign_folds, Ethnicity, Gender, Provenance, RawEmbedding, SubgroupScheme};
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn two_class_set(n_subjects: usize, per: usize, gap: f64, seed: u64) -> EmbeddingSet<f64> {
        let mut rng = seeded(seed, Stream::Synthetic);
        let groups = [
            SubgroupLabel::new(Ethnicity::White, Gender::Female),
            SubgroupLabel::new(Ethnicity::White, Gender::Male),
        ];
        let mut rows = Vec::new();
        for s in 0..n_subjects {
            let g = s % 2;
            for n in 0..per {
                let mut v: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
                v[0] += if g == 0 { gap } else { -gap };
                rows.push(RawEmbedding {
                    sample_id: format!("{s}_{n}"),
                    subject_key: s.to_string(),
                    subgroup: groups[g],
                    vector: v,
                });
            }
        }
        let scheme = SubgroupScheme::new(vec![Gender::Female, Gender::Male], vec![Ethnicity::White]).unwrap();
        EmbeddingSet::from_raw(rows, Some(scheme), Provenance::Synthetic).unwrap()
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            epochs: 10,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn architecture_is_fixed() {
        let p = build_probe::<f64>(64, 8, 0).unwrap();
        let kinds: Vec<&str> = p.layers().iter().map(|l| l.kind()).collect();
        assert_eq!(kinds.iter().filter(|k| **k == "dropout").count(), 3);
        assert_eq!(kinds.len(), 10);
        assert_eq!(p.input_width(), Some(64));
        assert_eq!(p.output_width(), Some(8));
        assert!(build_probe::<f64>(64, 1, 0).is_err());
    }

    #[test]
    fn hand_built_eight_predictions() {
        // true: A A A B B C C C ; predicted: A B A B C C A C
        let labels = SubgroupLabel::all()[..3].to_vec();
        let counts = vec![vec![2, 1, 0], vec![0, 1, 1], vec![1, 0, 2]];
        let r = ProbeReport::from_counts(labels, counts).unwrap();
        assert_eq!(r.accuracy, 5.0 / 8.0);
        let p = [2.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0];
        let rc = [2.0 / 3.0, 1.0 / 2.0, 2.0 / 3.0];
        for (c, s) in r.per_subgroup.iter().enumerate() {
            assert!((s.precision - p[c]).abs() < 1e-12);
            assert!((s.recall - rc[c]).abs() < 1e-12);
            assert!((s.f1 - 2.0 * p[c] * rc[c] / (p[c] + rc[c])).abs() < 1e-12);
        }
        assert!((r.average.f1 - (2.0 / 3.0 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((r.confusion[1][2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let labels = SubgroupLabel::all()[..2].to_vec();
        let r = ProbeReport::from_counts(labels, vec![vec![4, 0], vec![0, 3]]).unwrap();
        assert_eq!(r.confusion, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(r.per_subgroup.iter().all(|s| s.f1 == 1.0));
        let gap = privacy_gap(&r, &r).unwrap();
        assert_eq!(gap.accuracy, 0.0);
        assert!(gap.per_subgroup.iter().all(|g| g.f1 == 0.0));
    }

    #[test]
    fn separable_toy_is_learned() {
        let set = two_class_set(40, 10, 3.0, 1);
        let folds = assign_folds(&set, 5, 0).unwrap();
        let task = ProbeTask::new(&set, &folds).unwrap();
        let models = train_probe(&task, &quick()).unwrap();
        let r = evaluate_probe(&task, &models).unwrap();
        assert!(r.accuracy > 0.95, "accuracy {}", r.accuracy);
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let set = two_class_set(40, 10, 3.0, 2);
        let folds = assign_folds(&set, 5, 0).unwrap();
        let task = ProbeTask::new(&set, &folds).unwrap().shuffled_labels(7);
        let r = evaluate_probe(&task, &train_probe(&task, &quick()).unwrap()).unwrap();
        let n = set.len() as f64;
        let sigma = (0.5 * 0.5 / n).sqrt();
        assert!((r.accuracy - 0.5).abs() < 3.0 * sigma, "accuracy {}", r.accuracy);
    }

    #[test]
    fn same_seed_same_models() {
        let set = two_class_set(20, 5, 1.0, 3);
        let folds = assign_folds(&set, 2, 0).unwrap();
        let task = ProbeTask::new(&set, &folds).unwrap();
        let config = ProbeConfig { epochs: 2, ..ProbeConfig::default() };
        assert_eq!(train_probe(&task, &config).unwrap(), train_probe(&task, &config).unwrap());
    }

    #[test]
    fn fold_views_must_match() {
        let set = two_class_set(20, 5, 1.0, 3);
        let folds = assign_folds(&set, 2, 0).unwrap();
        let other = two_class_set(20, 4, 1.0, 3);
        assert!(ProbeTask::with_fold_views(&[set.clone()], &folds).is_err());
        assert!(ProbeTask::with_fold_views(&[set.clone(), other], &folds).is_err());
        let mut rng = seeded(0, Stream::Labels);
        let noisy = set
            .with_vectors(
                set.embeddings().iter().map(|e| e.vector.iter().map(|v| v + rng.random::<f64>()).collect()).collect(),
                Provenance::Debiased,
            )
            .unwrap();
        let views = [set.clone(), noisy];
        let task = ProbeTask::with_fold_views(&views, &folds).unwrap();
        assert_eq!(task.view(1), &views[1]);
    }

    #[test]
    fn mismatched_models_rejected() {
        let set = two_class_set(20, 5, 1.0, 3);
        let folds = assign_folds(&set, 2, 0).unwrap();
        let task = ProbeTask::new(&set, &folds).unwrap();
        let mut models = train_probe(&task, &ProbeConfig { epochs: 1, ..ProbeConfig::default() }).unwrap();
        models.swap(0, 1);
        assert!(evaluate_probe(&task, &models).is_err());
        assert!(evaluate_probe(&task, &models[..1]).is_err());
    }
}
