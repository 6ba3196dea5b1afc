//! Close returns of quasi-hyperbolic strings, their closing into true
//! periodic orbits by multiple-shooting Newton, and a posteriori checks of
//! the shadowing conclusions: a monotone reparametrization θ with θ′ near 1
//! and orbit distance small relative to the flow speed.

mod newton;
mod returns;
mod verify;

use thiserror::Error;

pub use newton::{close_up, floquet_lognorms, independent_residual, CloseUpOptions, PeriodicOrbit, PeriodicOrbitSummary};
pub use returns::{find_close_returns, recent_return, CloseReturn, ReturnSearch};
pub use verify::{verify_shadowing, ShadowingReport};

use crate::cocycle::CocycleError;
use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("converged to a shorter orbit: period {period} against a guess of {expected}")]
    Collapsed { period: f64, expected: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
}
