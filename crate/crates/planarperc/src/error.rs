//! Crate-wide error type. Variant names mirror the failure modes of the
//! individual modules so callers (and the CLI exit-code mapping) can match on them.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// The equation f_q(x) = 1 - 1/x has no root on the search interval.
    #[error("weight sequence is not admissible: {0}")]
    NotAdmissible(String),

    /// All q_k = 0, or q supported only on k=1 (2-gons): rejected outright.
    #[error("degenerate weight sequence: {0}")]
    Degenerate(String),

    /// An invalid WeightSeq (negative weight, duplicate index, bad tail shape, ...).
    #[error("invalid weight sequence: {0}")]
    InvalidWeights(String),

    /// nu negative-tail truncation estimate exceeds the 1e-4 guard.
    #[error("nu tail truncation too coarse: estimated lost mass {0:.3e}")]
    TailTruncationTooCoarse(f64),

    /// Classification slope window shorter than 3 dyadic levels.
    #[error("classification inconclusive: {0}")]
    Inconclusive(String),

    /// Criticality tuner found no admissible scale below its upper bracket.
    #[error("tuner bracket failure: {0}")]
    BracketFailure(String),

    /// duality_map called outside (3/2, 2].
    #[error("alpha {0} outside the duality domain (3/2, 2]")]
    DomainError(f64),

    /// Inner root solve failed at a quadrature node.
    #[error("root solve failed at quadrature node u={u}: {msg}")]
    RootFailure { u: f64, msg: String },

    /// Enumeration budget exceeded.
    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    /// Truncation bound requested from enumeration of a critical sequence is
    /// only heuristic; flagged instead of silently reported.
    #[error("enumeration tail bound nonconvergent (critical weights): {0}")]
    NonconvergentTail(String),

    /// DP window clipped more mass than the 1e-6 guard allows.
    #[error("DP window overflow: lost mass {0:.3e} exceeds 1e-6")]
    WindowOverflow(f64),

    /// bf_step needed W^(P) beyond the table and the nu-limit fallback is disabled.
    #[error("disk table exhausted at half-perimeter {0}")]
    TableExhausted(u32),

    /// Tail fit requested with too few samples beyond the window start.
    #[error("insufficient tail samples: {0}")]
    InsufficientTailSamples(String),

    /// Fit window contains fewer than 4 usable points.
    #[error("fit window too small: {0}")]
    WindowTooSmall(String),

    /// IO / serialization while reading or writing tables and reports.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
