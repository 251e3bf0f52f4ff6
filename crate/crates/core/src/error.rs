use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input left the domain where the model equations are defined
    /// (non-finite values, non-positive mass, `z + eps <= 0`, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The unconstrained steering law is undefined for a zero velocity costate.
    #[error("degenerate costate: velocity adjoint is zero")]
    DegenerateCostate,

    #[error("steering solver failed: {0}")]
    Steering(String),

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("shooting did not converge after {iterations} iterations (|residual| = {residual_norm:e})")]
    NonConvergence { iterations: usize, residual_norm: f64 },

    #[error("singular shooting jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    /// Even full upward thrust cannot stop the descent above the surface.
    #[error("infeasible initial state: full braking bottoms out at z = {floor:.3} m")]
    Infeasible { floor: f64 },

    #[error("all {starts} starts failed: {details}")]
    AllStartsFailed { starts: usize, details: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical solve itself, as opposed to
    /// configuration or I/O problems.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DegenerateCostate
                | Error::Steering(_)
                | Error::Integration { .. }
                | Error::NonConvergence { .. }
                | Error::SingularJacobian { .. }
                | Error::Infeasible { .. }
                | Error::AllStartsFailed { .. }
        )
    }
}
