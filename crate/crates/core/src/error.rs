use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input ({context}): {message}")]
    Format { context: String, message: String },

    #[error("dimension mismatch for sample {sample_id}: expected {expected}, found {found}")]
    DimensionMismatch {
        sample_id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate sample id {0}")]
    DuplicateSample(String),

    #[error("subject {subject} appears in more than one subgroup")]
    SubjectSpansSubgroups { subject: String },

    #[error("sample {0} has a zero-norm vector")]
    ZeroNorm(String),

    #[error("subgroup {subgroup} has {have} subjects, need at least {need}")]
    TooFewSubjects {
        subgroup: String,
        have: usize,
        need: usize,
    },

    #[error("no imposter pairs possible in subgroup {0}")]
    NoImposters(String),

    #[error("{0} has no genuine or no imposter pairs")]
    EmptyClass(String),

    #[error("rate undefined: {0} denominator is zero")]
    DegenerateDenominator(&'static str),

    #[error(
        "FAR target {target} unreachable with {imposters} imposter pairs; \
         build at least {needed} imposter pairs"
    )]
    UnreachableFar {
        target: f64,
        imposters: usize,
        needed: usize,
    },

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the caller's inputs rather than by the computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
