use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{build_model, DebiasModel, ParamGroup};
use crate::embedding::{EmbeddingSet, FoldAssignment, Provenance};
use crate::error::{Error, Result};
use crate::metrics::{score_pairs, threshold_for_far};
use crate::nn::{Optimizer, OptimizerConfig, Parameterized, PlateauConfig, PlateauSchedule, Tensor2};
use crate::pairing::{build_pairs, PairList, PairPolicy};
use crate::rng::{seeded, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Momentum for the trunk and identity head.
    pub momentum: f64,
    /// Momentum for the attribute head. Heavy-ball momentum on the adversary
    /// turns the min-max chase into a growing oscillation, so it defaults to 0.
    pub attribute_momentum: f64,
    pub weight_decay: f64,
    pub plateau: PlateauConfig,
    pub lambda: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Keep a checkpoint every this many epochs (the last epoch is always kept).
    pub checkpoint_every: usize,
    /// FAR at which validation TAR selects the checkpoint.
    pub selection_far: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            lr: 0.1,
            momentum: 0.9,
            attribute_momentum: 0.0,
            weight_decay: 5e-4,
            plateau: PlateauConfig::default(),
            lambda: 1.0,
            max_epochs: 50,
            seed: 0,
            checkpoint_every: 1,
            selection_far: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs and checkpoint_every must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.selection_far > 0.0 && self.selection_far < 1.0) {
            return Err(Error::InvalidConfig("selection_far must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One row of the training log. Epoch 0 describes the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_id: f64,
    pub l_att: f64,
    /// `L_ID + L_ATT`, reported.
    pub total: f64,
    /// `L_ID − λL_ATT`, what the trunk descends.
    pub adversarial: f64,
    pub train_att_acc: f64,
    pub val_id_acc: f64,
    pub val_att_acc: f64,
    /// Validation TAR at the selection FAR.
    pub val_tar: f64,
    pub lr: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,l_id,l_att,total,val_id_acc,val_att_acc,lr";

pub fn write_epoch_csv(logs: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::from(EPOCH_CSV_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            l.epoch, l.l_id, l.l_att, l.total, l.val_id_acc, l.val_att_acc, l.lr
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Inputs with identity and attribute labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch<S> {
    pub x: Tensor2<S>,
    pub ids: Vec<usize>,
    pub atts: Vec<usize>,
}

impl<S: Scalar> LabeledBatch<S> {
    /// Dense subject ids and subgroup indices of `set`.
    pub fn from_set(set: &EmbeddingSet<S>) -> Self {
        let e = set.embeddings();
        Self {
            x: Tensor2::new(set.len(), set.dim(), set.matrix()).expect("matrix matches shape"),
            ids: e.iter().map(|e| e.subject_id).collect(),
            atts: (0..set.len()).map(|i| set.subgroup_index(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.gather_rows(rows),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            atts: rows.iter().map(|&r| self.atts[r]).collect(),
        }
    }
}

/// Held-out samples of training subjects, used to pick the checkpoint.
#[derive(Debug, Clone)]
pub struct ValidationSplit<S> {
    pub batch: LabeledBatch<S>,
    /// The validation samples as a set, for pair scoring.
    pub set: EmbeddingSet<S>,
    pub pairs: PairList,
}

/// Every fifth sample of each subject (by order within the subject) is held out.
const VALIDATION_EVERY: usize = 5;

/// Splits a training set into fit and validation parts. Labels in both parts
/// use `set`'s dense subject ids.
pub fn split_validation<S: Scalar>(set: &EmbeddingSet<S>, seed: u64) -> Result<(LabeledBatch<S>, ValidationSplit<S>)> {
    let all = LabeledBatch::from_set(set);
    let mut seen = vec![0usize; set.num_identities()];
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for (i, e) in set.embeddings().iter().enumerate() {
        let local = seen[e.subject_id];
        seen[e.subject_id] += 1;
        if local % VALIDATION_EVERY == VALIDATION_EVERY - 1 {
            val.push(i);
        } else {
            fit.push(i);
        }
    }
    let val_set = set.subset(&val);
    let pairs = build_pairs(
        &val_set,
        &FoldAssignment::single(val_set.num_identities()),
        &PairPolicy {
            seed,
            ..PairPolicy::default()
        },
    )?;
    let (p, n) = pairs.class_counts();
    if p == 0 || n == 0 {
        return Err(Error::EmptyClass("validation pairs".into()));
    }
    Ok((
        all.select(&fit),
        ValidationSplit {
            batch: all.select(&val),
            set: val_set,
            pairs,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub epoch: usize,
    pub model: DebiasModel<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<S> {
    pub logs: Vec<EpochLog>,
    pub checkpoints: Vec<Checkpoint<S>>,
}

fn validate_epoch<S: Scalar>(
    model: &DebiasModel<S>,
    val: Option<&ValidationSplit<S>>,
    far: f64,
) -> Result<(f64, f64, f64)> {
    let Some(val) = val else {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    };
    let loss = model.evaluate(&val.batch.x, &val.batch.ids, &val.batch.atts)?;
    let n = val.batch.len() as f64;
    let embedded = embed_set(model, &val.set)?;
    let tar = threshold_for_far(&score_pairs(&embedded, &val.pairs)?, far)?.tar;
    Ok((loss.id_correct as f64 / n, loss.att_correct as f64 / n, tar))
}

/// Minibatch SGD on `L_ID − λL_ATT` through the reversal layer.
///
/// Each epoch reshuffles `data`. The learning rate decays on plateaus of the
/// epoch-mean identity loss.
pub fn train<S: Scalar>(
    model: &mut DebiasModel<S>,
    data: &LabeledBatch<S>,
    val: Option<&ValidationSplit<S>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if config.batch_size > data.len() {
        return Err(Error::InvalidConfig(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            data.len()
        )));
    }
    model.set_lambda(config.lambda)?;
    let mut optimizer = Optimizer::new(OptimizerConfig::sgd(config.lr, config.momentum, config.weight_decay))?;
    let mut adversary = Optimizer::new(OptimizerConfig::sgd(
        config.lr,
        config.attribute_momentum,
        config.weight_decay,
    ))?;
    let mut schedule = PlateauSchedule::new(config.plateau);
    let mut shuffle_rng = seeded(config.seed, Stream::Batches);
    let mut unused_rng = seeded(config.seed, Stream::Dropout);
    let lambda = config.lambda;
    let n = data.len() as f64;

    let initial = model.evaluate(&data.x, &data.ids, &data.atts)?;
    let (val_id, val_att, val_tar) = validate_epoch(model, val, config.selection_far)?;
    let mut logs = vec![EpochLog {
        epoch: 0,
        l_id: initial.l_id.as_f64(),
        l_att: initial.l_att.as_f64(),
        total: (initial.l_id + initial.l_att).as_f64(),
        adversarial: initial.l_id.as_f64() - lambda * initial.l_att.as_f64(),
        train_att_acc: initial.att_correct as f64 / n,
        val_id_acc: val_id,
        val_att_acc: val_att,
        val_tar,
        lr: optimizer.lr(),
    }];
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = optimizer.lr();
        let (mut sum_id, mut sum_att, mut att_hits) = (0.0, 0.0, 0usize);
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let batch = data.select(rows);
            model.zero_grad();
            let loss = model
                .forward_backward(&batch.x, &batch.ids, &batch.atts, &mut unused_rng)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {b}")),
                    other => other,
                })?;
            let (l_id, l_att) = (loss.l_id.as_f64(), loss.l_att.as_f64());
            if !(l_id.is_finite() && l_att.is_finite()) {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            optimizer.step(model.group_params(&[ParamGroup::Trunk, ParamGroup::Identity]))?;
            adversary.set_lr(optimizer.lr())?;
            adversary.step(model.group_params(&[ParamGroup::Attribute]))?;
            sum_id += l_id * rows.len() as f64;
            sum_att += l_att * rows.len() as f64;
            att_hits += loss.att_correct;
        }
        let (l_id, l_att) = (sum_id / n, sum_att / n);
        let (val_id, val_att, val_tar) = validate_epoch(model, val, config.selection_far)?;
        logs.push(EpochLog {
            epoch,
            l_id,
            l_att,
            total: l_id + l_att,
            adversarial: l_id - lambda * l_att,
            train_att_acc: att_hits as f64 / n,
            val_id_acc: val_id,
            val_att_acc: val_att,
            val_tar,
            lr,
        });
        if epoch % config.checkpoint_every == 0 || epoch == config.max_epochs {
            checkpoints.push(Checkpoint {
                epoch,
                model: model.clone(),
            });
        }
        schedule.step(l_id, &mut optimizer)?;
    }
    Ok(TrainOutcome { logs, checkpoints })
}

/// Index into `candidates` of the best `(epoch, metric)`; the earliest epoch
/// wins ties.
pub fn select_checkpoint(candidates: &[(usize, f64)]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (n, &(epoch, metric)) in candidates.iter().enumerate() {
        if !metric.is_finite() {
            continue;
        }
        best = match best {
            None => Some(n),
            Some(b) => {
                let (be, bm) = candidates[b];
                if metric > bm || (metric == bm && epoch < be) {
                    Some(n)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::InvalidArgument("no checkpoint carries a validation metric".into()))
}

/// Trunk outputs of every embedding, L2-normalised, labels unchanged.
pub fn embed_set<S: Scalar>(model: &DebiasModel<S>, set: &EmbeddingSet<S>) -> Result<EmbeddingSet<S>> {
    if set.dim() != model.shape().input_dim {
        return Err(Error::DimensionMismatch {
            sample_id: set.embeddings().first().map_or_else(String::new, |e| e.sample_id.clone()),
            expected: model.shape().input_dim,
            found: set.dim(),
        });
    }
    let x = Tensor2::new(set.len(), set.dim(), set.matrix())?;
    let h = model.embed(&x)?;
    let vectors = (0..h.rows()).map(|r| h.row(r).to_vec()).collect();
    crate::embedding::l2_normalize(&set.with_vectors(vectors, Provenance::Debiased)?)
}

/// Debiased copy of `set`: eval-mode trunk, unit norm, provenance `Debiased`.
pub fn export_debiased<S: Scalar>(model: &DebiasModel<S>, set: &EmbeddingSet<S>) -> Result<EmbeddingSet<S>> {
    embed_set(model, set)
}

/// Training and selection on every fold but `fold`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun<S> {
    pub fold: usize,
    pub logs: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub model: DebiasModel<S>,
}

/// Trains on the subjects outside `fold`, holding out part of their samples
/// for checkpoint selection, and returns the selected model.
pub fn train_fold<S: Scalar>(
    set: &EmbeddingSet<S>,
    folds: &FoldAssignment,
    fold: usize,
    config: &TrainConfig,
) -> Result<FoldRun<S>> {
    if fold >= folds.num_folds() {
        return Err(Error::InvalidArgument(format!(
            "fold {fold} out of range for {} folds",
            folds.num_folds()
        )));
    }
    let seed = config.seed.wrapping_add(fold as u64);
    let train_set = set.subset(&folds.sample_indices(set, fold, false));
    let (fit, val) = split_validation(&train_set, seed)?;
    let mut model = build_model(
        set.dim(),
        train_set.num_identities(),
        set.scheme().num_subgroups(),
        config.lambda,
        seed,
    )?;
    let fold_config = TrainConfig { seed, ..*config };
    let outcome = train(&mut model, &fit, Some(&val), &fold_config)?;
    let candidates: Vec<(usize, f64)> = outcome
        .checkpoints
        .iter()
        .map(|c| (c.epoch, outcome.logs[c.epoch].val_tar))
        .collect();
    let chosen = &outcome.checkpoints[select_checkpoint(&candidates)?];
    Ok(FoldRun {
        fold,
        selected_epoch: chosen.epoch,
        model: chosen.model.clone(),
        logs: outcome.logs,
    })
}
