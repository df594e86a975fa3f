use thiserror::Error;

use crate::pattern::Assumption1Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A combinatorial count (binomial, basis size) does not fit in `usize`.
    #[error("size overflow while computing {0}")]
    SizeOverflow(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pattern matrix rejected: {0}")]
    Assumption1(#[from] Assumption1Violation),

    #[error(
        "Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal mass {off:e})"
    )]
    NoConvergence { sweeps: usize, off: f64 },

    /// The eigenvalue interval straddles zero, so the interval-lifted test
    /// cannot keep the Lyapunov blocks positive on all of it.
    #[error(
        "eigenvalue interval [{lo}, {hi}] contains 0; the KYP-lifted test needs the \
         nonzero spectrum of the pattern matrix on one side of zero"
    )]
    IntervalContainsZero { lo: f64, hi: f64 },

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("SDPA parse error at line {line}: {msg}")]
    SdpaParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
