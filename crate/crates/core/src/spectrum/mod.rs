//! Lyapunov exponents of Φ_t, ψ_t and ψ*_t, the Oseledec splitting of the
//! normal bundle, and finite-window domination certificates.
//!
//! Every limit t → ±∞ is replaced by a finite window. Convergence is reported
//! (drift of running averages, burn-in flags) rather than assumed.

mod domination;
mod qr;
mod splitting;

use thiserror::Error;

pub use domination::{domination_certificate, domination_windows, DominationCertificate, DominationOptions};
pub use qr::{
    benettin, qr_exponents, scaled_equals_unscaled_check, tangent_exponents, ScalingIdentityReport,
    SpectrumEstimate, WhichFlow, MIN_STEPS,
};
pub use splitting::{
    compare_splittings, finite_window_splitting, oseledec_splitting, SplittingAgreement, SplittingEstimate,
    SplittingOptions,
};

use crate::cocycle::CocycleError;
use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("chain has {steps} steps, at least {required} are needed")]
    InsufficientData { steps: usize, required: usize },
    #[error("step {step} is numerically singular (R diagonal {value:e})")]
    IllConditioned { step: usize, value: f64 },
    #[error("spectral gap {gap} is below the hyperbolicity threshold")]
    NoGap { gap: f64 },
    #[error("all exponents are negative: the unstable bundle is trivial")]
    AllStable,
    #[error("all exponents are positive: the stable bundle is trivial")]
    AllUnstable,
    #[error("requested index {requested} but {negative} exponents are negative")]
    IndexMismatch { requested: usize, negative: usize },
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}
