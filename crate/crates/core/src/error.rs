use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// Variants split into two families: malformed input (bad dimensions, invalid
/// probe parameters, missing weights) and numerical rejection (non-PSD
/// matrices, singular updates, divergent information). See
/// [`Error::is_numerical`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite entry in {context}")]
    NonFinite { context: String },

    #[error("matrix is not symmetric: |m[{row}][{col}] - m[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("matrix is not square or has inconsistent rows ({0})")]
    NotSquare(String),

    #[error("matrix is not PSD: eigenvalue {min_eigenvalue:e} below -{threshold:e}")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid probe specification at `{field}`: {reason}")]
    InvalidFamily { field: String, reason: String },

    #[error("state is not normalized: sum |c_j|^2 = {norm_sq}")]
    NotNormalized { norm_sq: f64 },

    #[error("update makes matrix singular (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },

    #[error("no closed form for family `{0}`; use generic qfim")]
    NoClosedForm(String),

    #[error("QFIM singular at critical point: {0}")]
    CriticalPoint(String),

    #[error("FIM divergent at this x: outcome {outcome} has p = {probability:e} with nonzero gradient")]
    FimDivergent { outcome: usize, probability: f64 },

    #[error("weight vector is zero")]
    ZeroWeight,

    #[error("weight entirely in kernel; weak bound undefined (w^T F w = {0:e})")]
    WeightInKernel(f64),

    #[error("distributed scenario requires a weight vector")]
    MissingWeight,

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("outcome probabilities sum to {0}, not 1")]
    ProbabilityNotNormalized(f64),

    #[error("parameter not identified by this POVM: {0}")]
    NotIdentified(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for rejections caused by the numbers themselves rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::SingularUpdate { .. }
                | Error::CriticalPoint(_)
                | Error::FimDivergent { .. }
                | Error::WeightInKernel(_)
                | Error::ProbabilityNotNormalized(_)
                | Error::NotIdentified(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
