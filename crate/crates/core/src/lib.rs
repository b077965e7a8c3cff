//! Space-time multicontinuum upscaling of diffusion on perforated domains
//! whose channels shrink over time.
//!
//! The pipeline builds a channel geometry and its erosion timeline, a
//! fine-grid reference solution, constrained cell problems on oversampled
//! RVEs, the effective coefficients of the coupled macro model, and the
//! relative errors between the two.

pub mod cells;
pub mod config;
pub mod error;
pub mod fem;
pub mod fine;
pub mod geometry;
pub mod io;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod problem;
pub mod saddle;
pub mod sparse;
pub mod svg;
pub mod upscale;

pub use error::{Error, Result};

/// Number of continua (thick and thin channels).
pub const N_CONTINUA: usize = 2;
