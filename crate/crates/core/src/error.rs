use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Both quadratic forms vanish along the requested tightness direction.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("integration diverged at t = {time} s")]
    Divergence { time: f64 },

    #[error("degenerate encounter geometry: {0}")]
    DegenerateGeometry(String),

    #[error("initial point is not strictly feasible: constraint `{constraint}` (margin {margin:e})")]
    InfeasibleStart { constraint: String, margin: f64 },

    #[error("problem is infeasible: constraint `{constraint}` cannot be satisfied (best margin {margin:e})")]
    Infeasible { constraint: String, margin: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
