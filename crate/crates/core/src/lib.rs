//! Demographic bias auditing and adversarial debiasing for embedding-based
//! face verification.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which is what the CLI uses.

pub mod debias;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pairing;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// An embedding set in `f64`.
pub type EmbeddingSet = embedding::EmbeddingSet<f64>;
pub type Embedding = embedding::Embedding<f64>;
pub type ScoredPairs = metrics::ScoredPairs<f64>;
pub type Sweep = metrics::Sweep<f64>;
pub type ThresholdSet = metrics::ThresholdSet<f64>;
pub type FarOperatingPoint = metrics::FarOperatingPoint<f64>;
pub type ConfusionAtThreshold = metrics::ConfusionAtThreshold<f64>;
pub type RateReport = metrics::RateReport<f64>;
pub type Tensor = nn::Tensor2<f64>;
pub type Network = nn::Sequential<f64>;
pub type DebiasModel = debias::DebiasModel<f64>;
pub type FoldRun = debias::FoldRun<f64>;
pub type ProbeFold = probe::ProbeFold<f64>;
pub type ProbeTask<'a> = probe::ProbeTask<'a, f64>;
