//! Command-line pipeline over the `starflow` library: simulate an orbit,
//! estimate its spectrum and splitting, select strings and block constants,
//! close returns into periodic orbits and compare their measures with the
//! time average along the orbit.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plots;

pub use config::PipelineConfig;
pub use error::CliError;
pub use pipeline::{Outcome, Session, Stage};
