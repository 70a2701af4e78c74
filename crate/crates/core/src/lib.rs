#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Bayesian ReLU networks with shrinkage priors for regression on Besov-class targets.

pub mod arch;
pub mod besov;
pub mod cli;
pub mod error;
pub mod experiment;
mod jsonfloat;
pub mod mh;
pub mod net;
pub mod priors;
pub mod special;
pub mod vi;

pub use error::{Error, Result};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
