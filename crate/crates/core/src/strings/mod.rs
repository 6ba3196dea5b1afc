//! Contracting and expanding points, (η, T)-quasi-hyperbolic strings and
//! Pesin blocks of the scaled linear Poincaré flow, all read off log profiles
//! of a cocycle chain restricted to an invariant splitting E ⊕ F.
//!
//! Partitions are always subsets of the chain's own sample grid.

mod pesin;
mod pliss;
mod profile;
mod scan;

use thiserror::Error;

pub use pesin::{
    block_constants, block_derivation, member_flags, membership_fraction, pesin_membership, BlockDerivation,
    PesinBlockParams,
};
pub use pliss::{check_segment, pliss_select, Margins, QuasiHyperbolicSegment};
pub use profile::LogProfile;
pub use scan::{contracting_scan, expanding_scan};

/// Rounding allowance on every inequality of the definitions.
pub const EPS_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StringsError {
    #[error("step {index} lasts {dt}, longer than the partition gap {gap}")]
    GapTooLarge { index: usize, dt: f64, gap: f64 },
    #[error("spectrum is not hyperbolic (min |λ| = {gap})")]
    NotHyperbolic { gap: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
