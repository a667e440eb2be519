//! Distributed single- and multi-object Bayesian tracking over sensor networks.
//!
//! The crate is `no_std` (with `alloc`) and contains every filter, fusion rule and
//! simulation primitive. File formats, the CLI and Monte Carlo orchestration live in
//! the companion `netrack` crate.
#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod consensus;
pub mod cphd;
pub mod error;
pub mod gaussian;
pub mod kalman;
pub mod labeled;
pub mod labeled_fusion;
pub mod math;
pub mod metrics;
pub mod mm_filters;
pub mod rfs;
pub mod scenario;

pub use error::{Error, Result};
