//! Secure key-rate lower bounds for decoy-state BB84.
//!
//! The pipeline runs channel model -> measured (or simulated) statistics ->
//! single-photon bounds -> GLLP rate. [`planner`] searches protocol
//! parameters over that pipeline and [`montecarlo`] produces pulse-level
//! statistics that feed the same analyzer as experimental data.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod planner;
pub mod security;

pub use error::{Error, Result};
