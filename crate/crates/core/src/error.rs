use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-canonical residue {0:?}")]
    NonCanonicalResidue(char),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("position {position} out of range for length {len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("malformed substitution matrix: {0}")]
    Matrix(String),

    #[error("invalid probabilities: {0}")]
    Probabilities(String),

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("invalid hyperparameter: {0}")]
    Hyperparameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mutation sets refer to different parental sequences")]
    ParentalMismatch,

    #[error("duplicate sequence in dataset: {0}")]
    DuplicateSequence(String),

    #[error(
        "cholesky failed after jitter {jitter:e} (n = {n}, diag range [{min_diag:e}, {max_diag:e}])"
    )]
    Cholesky {
        n: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("solver did not converge after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
