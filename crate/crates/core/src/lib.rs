//! Jacobian nuclear-norm regularization.
//!
//! Penalizing `‖Jf[x]‖_*` pushes a learned map towards being locally low rank.
//! This crate provides the exact penalty, the equivalent Frobenius-split
//! penalty for composite models `f = g ∘ h`, and a Jacobian-free stochastic
//! estimate of it that needs only forward evaluations, together with the
//! small dense linear algebra, models, training loop and experiments used to
//! check them against closed-form solutions.

pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod regularizers;
pub mod rng;
pub mod selftest;
pub mod training;

pub use autodiff::Tensor;
pub use error::{Error, Result};
