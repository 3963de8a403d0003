use thiserror::Error;

/// Errors raised by the pruning toolkit.
///
/// Variants are split along the line the CLI cares about: caller mistakes
/// (shapes, preconditions, parse failures) versus numerical failures
/// (singular factorizations, non-finite values, failed iterations).
#[derive(Debug, Error)]
pub enum PruneError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: precondition violated: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("{op}: matrix is not positive definite (pivot {pivot})")]
    Singular { op: &'static str, pivot: usize },

    #[error("{op}: non-finite value: {detail}")]
    NonFinite { op: &'static str, detail: String },

    #[error("{op}: {count} candidate masks exceed the limit of {limit}")]
    CombinatorialLimit { op: &'static str, count: u128, limit: u128 },

    #[error("{op}: contract violation: {detail}")]
    ContractViolation { op: &'static str, detail: String },

    #[error("{op}: did not converge: {detail}")]
    Convergence { op: &'static str, detail: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PruneError {
    /// True for failures caused by the numbers rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PruneError::Singular { .. }
                | PruneError::NonFinite { .. }
                | PruneError::Convergence { .. }
        )
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        PruneError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn pre(op: &'static str, detail: impl Into<String>) -> Self {
        PruneError::Precondition {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PruneError>;
