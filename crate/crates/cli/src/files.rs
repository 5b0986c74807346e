//! Input checks and output writers shared by the subcommands.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fairvec::embedding::io::BINARY_MAGIC;
use fairvec::embedding::{load_embeddings, save_embeddings, EmbeddingFormat};
use fairvec::EmbeddingSet;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::InputError;

/// Fails with a named [`InputError::Missing`] when `path` does not exist.
pub fn require<'a>(path: &'a Path, what: &'static str) -> anyhow::Result<&'a Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(InputError::Missing {
            what,
            path: path.display().to_string(),
        }
        .into())
    }
}

/// Binary when the file starts with the magic bytes, CSV otherwise.
pub fn detect_format(path: &Path) -> anyhow::Result<EmbeddingFormat> {
    let mut head = [0u8; 4];
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = file.read(&mut head).with_context(|| format!("reading {}", path.display()))?;
    Ok(if n == 4 && &head == BINARY_MAGIC {
        EmbeddingFormat::Binary
    } else {
        EmbeddingFormat::Csv
    })
}

pub fn load_set(path: &Path, what: &'static str) -> anyhow::Result<EmbeddingSet> {
    require(path, what)?;
    let format = detect_format(path)?;
    load_embeddings(path, format).with_context(|| format!("loading {what}"))
}

pub fn extension(format: EmbeddingFormat) -> &'static str {
    match format {
        EmbeddingFormat::Binary => "fve",
        EmbeddingFormat::Csv => "csv",
    }
}

/// Writes `set` as `dir/stem.{fve,csv}` and returns the path.
pub fn save_set(set: &EmbeddingSet, dir: &Path, stem: &str, format: EmbeddingFormat) -> anyhow::Result<PathBuf> {
    let path = dir.join(format!("{stem}.{}", extension(format)));
    save_embeddings(set, &path, format)?;
    Ok(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> anyhow::Result<T> {
    require(path, what)?;
    let bytes = fs::read(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {what} {}", path.display()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, bytes)
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Empty for `None`, shortest round-trip decimal otherwise.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}
