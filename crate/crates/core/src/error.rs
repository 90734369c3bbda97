use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

use crate::trainer::TrainTrace;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector sizes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Input has the right size but the wrong structure (asymmetric, mismatched widths).
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A value violates a domain invariant, e.g. a non-unit input vector.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("matrix is not positive definite (pivot {index} is {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("degenerate spectrum: lambda_min = {lambda_min:e}{}", near_parallel_suffix(*.near_parallel))]
    DegenerateSpectrum { lambda_min: f64, near_parallel: Option<(usize, usize)> },
    /// The caller asked for something the inputs cannot support,
    /// e.g. auditing snapshots that were never recorded.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("local training diverged on client {client} at local step {step}")]
    LocalDivergence { client: usize, step: usize },
    /// Training blew up; `trace` holds everything recorded up to `round`.
    #[error("training diverged at round {round} (residual {residual_sq:e}){}", local_suffix(*.local))]
    Diverged {
        round: usize,
        residual_sq: f64,
        /// Client and local step where a local run went non-finite, if that was the cause.
        local: Option<(usize, usize)>,
        trace: Box<TrainTrace>,
    },
    /// An exact algebraic identity failed; this means a bug, not a violated bound.
    #[error("internal consistency error: {0}")]
    InternalConsistency(String),
}

fn near_parallel_suffix(pair: Option<(usize, usize)>) -> String {
    match pair {
        Some((i, j)) => alloc::format!(" (inputs {i} and {j} are near-parallel)"),
        None => String::new(),
    }
}

fn local_suffix(local: Option<(usize, usize)>) -> String {
    match local {
        Some((c, k)) => alloc::format!(", client {c} went non-finite at local step {k}"),
        None => String::new(),
    }
}
