use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use fairvec::embedding::FoldAssignment;
use fairvec::probe::{evaluate_probe, train_probe_fold, ProbeConfig, ProbeReport};
use fairvec::{EmbeddingSet, ProbeFold, ProbeTask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::files::{create_dir, load_set, read_json, require, write, write_json};
use crate::manifest::ManifestBuilder;
use crate::svg::heatmap;
use crate::{GlobalArgs, InputError};

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// Feature set probed with the same features for every fold.
    #[arg(long, required_unless_present = "fold_views", conflicts_with = "fold_views")]
    pub embeddings: Option<PathBuf>,
    /// Fold file written by `pairs`.
    #[arg(long)]
    pub folds: PathBuf,
    /// `fold_views` directory written by `debias`; fold k trains and tests on view k.
    #[arg(long)]
    pub fold_views: Option<PathBuf>,
    /// Permute subgroup labels first; accuracy should fall to chance.
    #[arg(long)]
    pub shuffle_labels: bool,
    /// Probe config JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Maximum training epochs; overrides the config.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct ProbeRunConfig {
    probe: ProbeConfig,
    fold_views: bool,
    shuffle_labels: bool,
}

/// Per-fold outcome listed in `training.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeFoldSummary {
    pub fold: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
}

fn view_path(dir: &Path, fold: usize) -> anyhow::Result<PathBuf> {
    ["fve", "csv"]
        .iter()
        .map(|ext| dir.join(format!("fold{fold}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| {
            InputError::Missing {
                what: "fold view",
                path: dir.join(format!("fold{fold}.fve")).display().to_string(),
            }
            .into()
        })
}

/// Loads the fold file against view 0, then one view per fold.
fn load_views(dir: &Path, folds_path: &Path) -> anyhow::Result<(Vec<EmbeddingSet>, FoldAssignment, Vec<PathBuf>)> {
    require(dir, "fold view directory")?;
    let first_path = view_path(dir, 0)?;
    let first = load_set(&first_path, "fold view")?;
    let folds = FoldAssignment::load(&first, folds_path).context("loading fold file")?;
    let mut paths = vec![first_path];
    let mut views = vec![first];
    for k in 1..folds.num_folds() {
        let p = view_path(dir, k)?;
        views.push(load_set(&p, "fold view")?);
        paths.push(p);
    }
    Ok((views, folds, paths))
}

pub fn run(args: &ProbeArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let mut probe: ProbeConfig = match &args.config {
        Some(p) => read_json(p, "probe config")?,
        None => ProbeConfig::default(),
    };
    if let Some(e) = args.epochs {
        probe.epochs = e;
    }
    probe.seed = global.seed_or(probe.seed);
    probe.validate()?;
    let config = ProbeRunConfig {
        probe,
        fold_views: args.fold_views.is_some(),
        shuffle_labels: args.shuffle_labels,
    };
    let mut manifest = ManifestBuilder::start("probe", &config, probe.seed, global.threads)?;
    manifest.input("folds", &args.folds);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    require(&args.folds, "fold file")?;

    let (views, folds) = match (&args.fold_views, &args.embeddings) {
        (Some(dir), _) => {
            let (views, folds, paths) = load_views(dir, &args.folds)?;
            for p in &paths {
                manifest.input("fold_view", p);
            }
            (views, folds)
        }
        (None, Some(path)) => {
            manifest.input("embeddings", path);
            let set = load_set(path, "embedding file")?;
            let folds = FoldAssignment::load(&set, &args.folds).context("loading fold file")?;
            (vec![set], folds)
        }
        (None, None) => return Err(InputError::Usage("give --embeddings or --fold-views".into()).into()),
    };
    let mut task = if args.fold_views.is_some() {
        ProbeTask::with_fold_views(&views, &folds)?
    } else {
        ProbeTask::new(&views[0], &folds)?
    };
    if args.shuffle_labels {
        task = task.shuffled_labels(probe.seed);
    }

    let models: Vec<ProbeFold> = (0..folds.num_folds())
        .into_par_iter()
        .map(|fold| train_probe_fold(&task, fold, &probe))
        .collect::<Result<_, _>>()?;
    let report = evaluate_probe(&task, &models)?;
    log::info!("probe accuracy {:.4}", report.accuracy);

    let dir = &args.out_dir;
    create_dir(dir)?;
    let report_path = dir.join("probe.json");
    write_json(&report_path, &report)?;
    manifest.output("probe", &report_path);
    let csv = dir.join("confusion.csv");
    write(&csv, report.confusion_csv())?;
    manifest.output("confusion", &csv);
    let svg = dir.join("confusion.svg");
    let labels: Vec<String> = report.subgroups.iter().map(|s| s.to_string()).collect();
    write(&svg, heatmap("Subgroup probe confusion", &labels, &report.confusion))?;
    manifest.output("confusion_svg", &svg);
    let summaries: Vec<ProbeFoldSummary> = models
        .iter()
        .map(|m| ProbeFoldSummary {
            fold: m.fold,
            epochs_run: m.epochs_run,
            final_loss: m.final_loss,
        })
        .collect();
    let training = dir.join("training.json");
    write_json(&training, &summaries)?;
    manifest.output("training", &training);
    manifest.finish(dir)?;
    Ok(())
}

/// Loads `probe.json`, or `dir/probe.json` when given a directory.
pub fn load_report(path: &Path, what: &'static str) -> anyhow::Result<ProbeReport> {
    let file = if path.is_dir() { path.join("probe.json") } else { path.to_path_buf() };
    read_json(&file, what)
}
