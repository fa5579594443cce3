use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbmdsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite input value")]
    NonFinite,

    #[error("zero-norm vector under the cosine metric")]
    ZeroNorm,

    #[error("negative entry {value} rejected by the cosine metric")]
    NegativeEntry { value: f64 },

    #[error("jaccard dissimilarity undefined for two empty token sets")]
    EmptyTokenSets,

    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<GbmdsError>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("metric {metric} is not compatible with {input}")]
    IncompatibleMetric { metric: String, input: String },

    #[error("eigendecomposition failed")]
    Eigen,

    #[error("truncation normalizer underflowed for pair ({i}, {j}); latent point far outside the data range")]
    NormalizerUnderflow { i: usize, j: usize },

    #[error("non-finite density encountered at iteration {iteration}")]
    NonFiniteDensity { iteration: usize },

    #[error("iteration cap {cap} exceeded (rCESS threshold too close to 1?)")]
    IterationCap { cap: usize },

    #[error("batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<GbmdsError>,
    },
}

impl GbmdsError {
    pub(crate) fn at_pair(self, i: usize, j: usize) -> Self {
        GbmdsError::Pair {
            i,
            j,
            source: Box::new(self),
        }
    }

    /// True when the error stems from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            GbmdsError::Eigen
            | GbmdsError::NormalizerUnderflow { .. }
            | GbmdsError::NonFiniteDensity { .. } => true,
            GbmdsError::Pair { source, .. } | GbmdsError::Batch { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }

    /// True when the engine stopped because of the iteration cap.
    pub fn is_iteration_cap(&self) -> bool {
        match self {
            GbmdsError::IterationCap { .. } => true,
            GbmdsError::Pair { source, .. } | GbmdsError::Batch { source, .. } => {
                source.is_iteration_cap()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GbmdsError>;
