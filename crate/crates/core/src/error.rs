use std::path::PathBuf;

use crate::capsolve::CapacityResult;
use crate::potential::PotentialResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain has no interior node")]
    EmptyDomain,

    #[error("bad domain spec: {0}")]
    BadSpec(String),

    #[error("node {node} is not a closure node of the domain")]
    OutOfDomain { node: usize },

    #[error("point {point:?} does not resolve to a closure node")]
    PointOutOfDomain { point: Vec<f64> },

    #[error("operands live on different domains")]
    DomainMismatch,

    #[error("exponent p = {0} outside the supported range [1.1, 10]")]
    InvalidExponent(f64),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("non-finite value at closure position {position}")]
    NonFinite { position: usize },

    #[error(
        "capacity solve did not converge after {} iterations (residual {:.3e})",
        .0.iterations,
        .0.kkt_residual
    )]
    CapacityNotConverged(Box<CapacityResult>),

    #[error(
        "potential solve did not converge after {} iterations (residual {:.3e})",
        .0.iterations,
        .0.el_residual
    )]
    PotentialNotConverged(Box<PotentialResult>),

    #[error("candidate is not admissible: value {value} at node {node} is below 0.9")]
    Infeasible { node: usize, value: f64 },

    #[error("capacitary measure has weight {weight:.3e} at node {node}")]
    NegativeMeasure { node: usize, weight: f64 },

    #[error("a nonnegative measure is required, found weight {weight:.3e} at node {node}")]
    SignedMeasure { node: usize, weight: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for the two non-convergence variants.
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::CapacityNotConverged(_) | Error::PotentialNotConverged(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
