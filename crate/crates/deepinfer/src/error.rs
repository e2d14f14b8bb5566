//! Crate-wide error type.
//!
//! Every fallible operation returns [`crate::Result`]. Variants are grouped
//! by what went wrong rather than where: configuration problems (bad knobs,
//! malformed architecture), data problems (ingestion, missing treatment
//! arms), and numeric failures (diverged training, degenerate variances,
//! domain violations).

use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum Error {
    /// An architecture description violates its invariants (zero widths,
    /// mismatched dropout list, non-positive clamp bound, ...).
    #[error("invalid architecture: {0}")]
    Architecture(String),

    /// A tuning knob or option is out of range (learning rate, clip
    /// threshold, confidence level, replication counts, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Shapes disagree: input length vs. network input dimension, target
    /// length vs. output dimension, covariate index out of range, ...
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A dataset could not be ingested or fails its contract. Messages
    /// carry 1-based line numbers where applicable.
    #[error("data error: {0}")]
    Data(String),

    /// An estimand needs observations in a treatment arm that is empty.
    #[error("treatment arm {arm} is empty")]
    EmptyArm { arm: u8 },

    /// A value left the domain a loss or transform is defined on.
    #[error("domain violation: {0}")]
    Domain(String),

    /// Influence scores are constant, so the plug-in variance is zero and
    /// no meaningful confidence interval exists.
    #[error("degenerate scores: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss; reported with the minibatch
    /// where it was first observed.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A serialized model file could not be parsed.
    #[error("model format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
