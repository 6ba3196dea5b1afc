//! The linear Poincaré flow ψ_t, its scaled version ψ*_t and the extended
//! flow Θ_t, evaluated as matrices in normal frames along an orbit.
//!
//! For a regular point x the normal space is N_x = X(x)^⊥ and
//!
//! ```text
//! ψ_t(v)  = Φ_t(v) − ⟨Φ_t(v), X(φ_t x)⟩ / |X(φ_t x)|² · X(φ_t x)
//! ψ*_t(v) = ψ_t(v) · |X(x)| / |X(φ_t x)|
//! ```

mod chain;
mod frame;

use thiserror::Error;

pub use chain::{
    build_chain, build_chain_from, extended_flow_step, linear_poincare_step, poincare_step,
    scaled_step, CocycleChain, SphereVectorPair,
};
pub use frame::{normal_frame, transport_frame, NormalFrame, DEGENERATE_NORM};

use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum CocycleError {
    #[error("state {x:?} is within the singularity guard (|X| = {speed:e})")]
    NearSingularity { x: Vec<f64>, speed: f64 },
    #[error("frame transport lost a direction (projected norm {norm:e})")]
    DegenerateProjection { norm: f64 },
    #[error("tangent push of the first component vanished (|Φv| = {norm:e})")]
    ZeroPush { norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<CocycleError>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}
