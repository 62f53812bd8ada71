//! Steady-state bifurcation diagrams as a differentiable objective.
//!
//! This crate traces the steady states of an ODE model F(u, p; θ) over a
//! scalar control condition p, detects where the state-space Jacobian
//! determinant crosses zero along the traced curves, and fits θ by gradient
//! descent so those crossings land on user-specified target locations. The
//! key property is that every gradient — of a bifurcation location, of the
//! arclength-normalized bifurcation measure, of the full loss — is computed
//! from the traced solution set alone, without differentiating through the
//! solver iterations that produced it.
//!
//! Modules follow the pipeline:
//!
//! * [`model`] — the model interface and exact derivative access (nested
//!   forward-mode duals).
//! * [`models`] — built-in model catalog and analytic cross-check oracles.
//! * [`continuation`] — deflated root search and pseudo-arclength tracing.
//! * [`geometry`] — tangents, bifurcation measure, deformation field, and the
//!   measure gradient.
//! * [`detection`] — crossing detection, Newton refinement on the extended
//!   system, and location sensitivities.
//! * [`cost`] — supervised error, semi-supervised loss, and its gradient.
//! * [`optimize`] — gradient descent / ADAM driver with reproducible batches.

pub mod continuation;
pub mod cost;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod models;
pub mod optimize;
pub mod scalar;

pub use error::{Error, Result};
