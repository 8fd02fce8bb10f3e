//! Closed-form interpretation of binary neural-network classifiers.
//!
//! A trained classifier `F(x) = sigmoid(f(x))` hides the quantity it bases its
//! decision on behind an arbitrary monotone reparameterization. Its latent
//! pre-sigmoid output `f` still shares unit-normalized input gradients with the
//! underlying decision function, so matching the normalized gradients of a
//! symbolic expression tree against those of `f` recovers a human-readable
//! member of the same equivalence class.
//!
//! The pipeline:
//!
//! 1. [`dataset`] — synthetic two-class benchmark problems with known decision
//!    formulas.
//! 2. [`nn`] — a small feedforward classifier with analytic input gradients.
//! 3. [`gradients`] — select near-boundary points and collect unit-normalized
//!    latent gradients.
//! 4. [`expr`] + [`search`] — multi-population genetic search over
//!    differentiable expression trees minimizing the normalized-gradient MSE,
//!    tracked along a complexity/loss Pareto front.
//! 5. [`hinge`] — symbolic classification baseline (hinge loss on labels),
//!    useful to demonstrate that replicating a classifier is not the same as
//!    interpreting it.
//! 6. [`equivalence`] — tools to certify that two scalar functions encode the
//!    same concept (gradient alignment, empirical monotone link).
//!
//! With the default `parallel` feature the data-parallel inner loops run on
//! rayon; results are bit-identical to the sequential fallback because every
//! parallel map collects in input order and reductions stay sequential.

pub mod dataset;
pub mod equivalence;
pub mod error;
pub mod expr;
pub mod gradients;
pub mod hinge;
pub mod nn;
pub mod optim;
pub mod parallel;
pub(crate) mod rng;
pub mod search;
pub(crate) mod vecmath;

pub use error::{Error, Result};
