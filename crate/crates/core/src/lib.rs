//! Superadiabatic (transitionless) driving for Lindblad master equations.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correction;
pub mod dynamics;
pub mod error;
mod linalg;
pub mod liouvillian;
pub mod operator_algebra;
pub mod scenarios;
pub mod spectral;

pub use error::{Error, Result};
