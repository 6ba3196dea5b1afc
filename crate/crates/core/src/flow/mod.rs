//! Vector fields on R^d, their flows and tangent flows.
//!
//! Every system implements [`FlowSystem`]. The ambient space is Euclidean, so
//! tangent spaces are identified with R^d and the exponential chart is the
//! identity.

mod ball;
mod orbit;
pub mod ode;
mod systems;
mod user;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use ball::{scaled_ball_check, BallReport};
pub use orbit::{
    flow_and_tangent, flow_rk4, integrate, integrate_at, tangent_integrate, IntegrateOptions, OrbitSegment,
    TangentPropagation,
};
pub use systems::{built_in, built_in_systems, Hopf, Lorenz};
pub use user::{UserSystem, UserSystemConfig};

/// Default speed floor below which a state is treated as singular.
pub const ALPHA_MIN: f64 = 1e-3;

/// Default escape radius for integration.
pub const ESCAPE_RADIUS: f64 = 1e4;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },
    #[error("trajectory left the ball of radius {radius} at t = {t}")]
    Blowup { t: f64, radius: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state {x:?} is within the singularity guard (|X| = {speed:e})")]
    NearSingularity { x: Vec<f64>, speed: f64 },
    #[error("sampled point {y:?} in the scaled ball is a singularity")]
    SingularBall { y: Vec<f64> },
    #[error("cannot parse user system: {0}")]
    ParseError(String),
}

/// A smooth vector field X on R^d.
pub trait FlowSystem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Writes X(x) into `out`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// DX(x). The default is a central finite difference.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(self, x)
    }

    /// Closed-form equilibria. May be empty when none are known.
    fn singularities(&self) -> Vec<DVector<f64>>;

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice());
        out
    }

    fn speed(&self, x: &[f64]) -> f64 {
        self.eval(x).norm()
    }

    /// Euclidean distance to the nearest listed singularity (infinite if none).
    fn singularity_distance(&self, x: &[f64]) -> f64 {
        let p = DVector::from_column_slice(x);
        self.singularities()
            .iter()
            .map(|s| (s - &p).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

pub type SharedSystem = Arc<dyn FlowSystem>;

/// Central differences with h = max(1e-6, 1e-6 |x|).
pub fn fd_jacobian<S: FlowSystem + ?Sized>(system: &S, x: &[f64]) -> DMatrix<f64> {
    let d = system.dim();
    let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let h = (1e-6 * scale).max(1e-6);
    let mut jac = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + h;
        system.eval_into(&xp, &mut fp);
        xp[j] = x[j] - h;
        system.eval_into(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}
