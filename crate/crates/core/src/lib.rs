//! Numerical approximation of hyperbolic ergodic measures of
//! three-dimensional flows by periodic measures: tangent and linear
//! Poincaré cocycles, Lyapunov spectra and splittings, quasi-hyperbolic
//! strings and Pesin blocks, closing of close returns, shadowing checks and
//! a truncated weak* distance between measures.

pub mod cocycle;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod shadow;
pub mod spectrum;
pub mod strings;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/flows.md")]
    pub struct Flows;
    #[doc = include_str!("../../../book/src/poincare.md")]
    pub struct Poincare;
    #[doc = include_str!("../../../book/src/spectrum.md")]
    pub struct Spectrum;
    #[doc = include_str!("../../../book/src/strings.md")]
    pub struct Strings;
    #[doc = include_str!("../../../book/src/shadowing.md")]
    pub struct Shadowing;
    #[doc = include_str!("../../../book/src/measures.md")]
    pub struct Measures;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
