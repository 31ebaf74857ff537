//! Generative survival modelling with a variational autoencoder and the Beran estimator.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod generation;
pub mod losses;
pub mod model;
pub mod survival;
pub mod training;
pub mod trajectory;
pub mod vae;

pub use error::{Error, Result};
