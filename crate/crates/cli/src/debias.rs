use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fairvec::debias::{export_debiased, train_fold, write_epoch_csv, DebiasShape, TrainConfig};
use fairvec::embedding::{FoldAssignment, Provenance};
use fairvec::nn::sidecar_path;
use fairvec::{EmbeddingSet, FoldRun};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::files::{create_dir, load_set, read_json, require, save_set, write_json};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct DebiasArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Fold file written by `pairs`.
    #[arg(long)]
    pub folds: PathBuf,
    /// Training config JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gradient reversal strength; overrides the config.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Maximum training epochs; overrides the config.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Written beside each checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub fold: usize,
    pub selected_epoch: usize,
    pub shape: DebiasShape,
    pub config: TrainConfig,
}

/// Per-fold outcome listed in `training.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub epochs_run: usize,
    pub selected_epoch: usize,
    pub selected_val_tar: f64,
    pub final_lr: f64,
}

pub fn resolve_config(path: Option<&Path>, args: &DebiasArgs, global: &GlobalArgs) -> anyhow::Result<TrainConfig> {
    let mut config: TrainConfig = match path {
        Some(p) => read_json(p, "training config")?,
        None => TrainConfig::default(),
    };
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    config.seed = global.seed_or(config.seed);
    config.validate()?;
    Ok(config)
}

/// Each sample taken from the view of the fold that held it out.
pub fn concatenate_held_out(views: &[EmbeddingSet], folds: &FoldAssignment) -> anyhow::Result<EmbeddingSet> {
    let first = views.first().context("no fold views")?;
    let vectors = first
        .embeddings()
        .iter()
        .enumerate()
        .map(|(i, e)| views[folds.fold_of(e.subject_id)].embeddings()[i].vector.clone())
        .collect();
    Ok(first.with_vectors(vectors, Provenance::Debiased)?)
}

pub fn run(args: &DebiasArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let config = resolve_config(args.config.as_deref(), args, global)?;
    let mut manifest = ManifestBuilder::start("debias", &config, config.seed, global.threads)?;
    manifest.input("embeddings", &args.embeddings);
    manifest.input("folds", &args.folds);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }

    let set = load_set(&args.embeddings, "embedding file")?;
    let folds = FoldAssignment::load(&set, require(&args.folds, "fold file")?).context("loading fold file")?;
    let runs: Vec<FoldRun> = (0..folds.num_folds())
        .into_par_iter()
        .map(|fold| {
            let run = train_fold(&set, &folds, fold, &config);
            if let Ok(r) = &run {
                log::info!("fold {fold}: {} epochs, kept epoch {}", r.logs.len() - 1, r.selected_epoch);
            }
            run
        })
        .collect::<Result<_, _>>()?;
    let views: Vec<EmbeddingSet> = runs
        .par_iter()
        .map(|r| export_debiased(&r.model, &set))
        .collect::<Result<_, _>>()?;

    let dir = &args.out_dir;
    for sub in ["fold_views", "logs", "checkpoints"] {
        create_dir(&dir.join(sub))?;
    }
    let mut summaries = Vec::new();
    for (run, view) in runs.iter().zip(&views) {
        let k = run.fold;
        let path = save_set(view, &dir.join("fold_views"), &format!("fold{k}"), global.format)?;
        manifest.output("fold_view", &path);

        let log_path = dir.join("logs").join(format!("fold{k}.csv"));
        write_epoch_csv(&run.logs, &log_path)?;
        manifest.output("epoch_log", &log_path);

        let ckpt = dir.join("checkpoints").join(format!("fold{k}.fvnn"));
        let info = CheckpointInfo {
            fold: k,
            selected_epoch: run.selected_epoch,
            shape: run.model.shape(),
            config: TrainConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config
            },
        };
        run.model.save(&ckpt, &info)?;
        manifest.output("checkpoint", &ckpt);
        manifest.output("checkpoint_sidecar", &sidecar_path(&ckpt));

        let last = run.logs.last().context("empty training log")?;
        summaries.push(FoldSummary {
            fold: k,
            epochs_run: last.epoch,
            selected_epoch: run.selected_epoch,
            selected_val_tar: run.logs[run.selected_epoch].val_tar,
            final_lr: last.lr,
        });
    }

    let debiased = concatenate_held_out(&views, &folds)?;
    let path = save_set(&debiased, dir, "debiased", global.format)?;
    manifest.output("debiased", &path);
    let training = dir.join("training.json");
    write_json(&training, &summaries)?;
    manifest.output("training", &training);
    manifest.finish(dir)?;
    Ok(())
}
