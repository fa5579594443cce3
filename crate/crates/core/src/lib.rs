//! Bayesian multidimensional scaling with truncated normal, skew-normal and
//! Student-t error models, fitted by adaptive annealed sequential Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod cmds;
pub mod dissimilarity;
pub mod error;
pub mod harness;
pub mod model;
pub mod postprocess;
pub mod smc;
pub mod special;

pub use error::{GbmdsError, Result};
