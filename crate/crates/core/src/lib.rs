//! Structured-grid simulation of relaxed conservative cross-diffusion
//! systems
//!
//! ```text
//! ∂ₜuᵢ = Δ(aᵢ(ũ) uᵢ),   ũᵢ − δᵢ Δũᵢ = uᵢ,   zero-flux boundaries,
//! ```
//!
//! with a semi-implicit scheme, a fully implicit Picard scheme for
//! cross-checking, and diagnostics for the invariants the continuous
//! problem enjoys (mass, nonnegativity, monotone `wᵢ`).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fixedpoint;
pub mod grid;
pub mod model;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use model::{CoefficientSpec, ModelSpec, Species};
pub use stepper::{SchemeConfig, Stepper, SystemState};
