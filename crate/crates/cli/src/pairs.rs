use std::path::PathBuf;

use clap::Args;
use fairvec::embedding::assign_folds;
use fairvec::pairing::{build_pairs, ImposterPolicy, PairPolicy, DEFAULT_IMPOSTER_RATIO};
use serde::Serialize;

use crate::files::{create_dir, load_set};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Number of subject-disjoint folds.
    #[arg(long, default_value_t = 5)]
    pub num_folds: usize,
    /// Imposter pairs per genuine pair in each subgroup and fold.
    #[arg(long, default_value_t = DEFAULT_IMPOSTER_RATIO, conflicts_with = "exhaustive")]
    pub imposter_ratio: f64,
    /// Keep every within-subgroup, within-fold imposter pair.
    #[arg(long)]
    pub exhaustive: bool,
    /// Receives `folds.csv`, `pairs.csv` and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct PairsConfig {
    num_folds: usize,
    policy: PairPolicy,
}

pub fn run(args: &PairsArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let seed = global.seed_or(0);
    let imposters = if args.exhaustive {
        ImposterPolicy::Exhaustive
    } else {
        ImposterPolicy::Ratio(args.imposter_ratio)
    };
    let config = PairsConfig {
        num_folds: args.num_folds,
        policy: PairPolicy { imposters, seed },
    };
    let mut manifest = ManifestBuilder::start("pairs", &config, seed, global.threads)?;
    manifest.input("embeddings", &args.embeddings);

    let set = load_set(&args.embeddings, "embedding file")?;
    let folds = assign_folds(&set, args.num_folds, seed)?;
    let pairs = build_pairs(&set, &folds, &config.policy)?;
    let (genuine, imposter) = pairs.class_counts();
    log::info!("{genuine} genuine and {imposter} imposter pairs over {} folds", args.num_folds);

    create_dir(&args.out_dir)?;
    let folds_path = args.out_dir.join("folds.csv");
    let pairs_path = args.out_dir.join("pairs.csv");
    folds.save(&set, &folds_path)?;
    pairs.save(&set, &pairs_path)?;
    manifest.output("folds", &folds_path);
    manifest.output("pairs", &pairs_path);
    manifest.finish(&args.out_dir)?;
    Ok(())
}
