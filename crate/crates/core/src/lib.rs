// Parameter checks use `!(x >= 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "cli")]
pub mod commands;
pub mod ensemble;
pub mod error;
pub mod fixed_point;
pub mod montecarlo;
pub mod optimize;
pub mod spectra;
pub mod theory;
pub mod tuning;
#[cfg(feature = "cli")]
pub mod verify;

pub use error::{Error, Result};
