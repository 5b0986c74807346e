use std::path::{Path, PathBuf};

use clap::Args;
use fairvec::synthetic::{default_biased_config, generate, SyntheticConfig};

use crate::files::{create_dir, read_json, save_set};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Synthetic config JSON. Without it, the default 8-subgroup biased config is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives `embeddings.{fve,csv}` and the manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// The config file (with `--seed` overriding its seed) or the default.
pub fn resolve_config(config: Option<&Path>, global: &GlobalArgs) -> anyhow::Result<SyntheticConfig> {
    match config {
        Some(path) => {
            let mut c: SyntheticConfig = read_json(path, "synthetic config")?;
            if let Some(seed) = global.seed {
                c.seed = seed;
            }
            c.validate()?;
            Ok(c)
        }
        None => Ok(default_biased_config(global.seed_or(0))?),
    }
}

pub fn run(args: &GenerateArgs, global: &GlobalArgs) -> anyhow::Result<()> {
    let config = resolve_config(args.config.as_deref(), global)?;
    let mut manifest = ManifestBuilder::start("generate", &config, config.seed, global.threads)?;
    if let Some(path) = &args.config {
        manifest.input("config", path);
    }
    let set = generate::<f64>(&config)?;
    create_dir(&args.out_dir)?;
    let path = save_set(&set, &args.out_dir, "embeddings", global.format)?;
    log::info!("wrote {} embeddings of dim {} to {}", set.len(), set.dim(), path.display());
    manifest.output("embeddings", &path);
    manifest.finish(&args.out_dir)?;
    Ok(())
}
