//! Monte-Carlo simulation and analysis of adaptive qubit state tomography.
//!
//! The crate implements the rank-preserving-transformation protocol (RankP)
//! with its non-complemented, basis-complemented and minimally complemented
//! variants, the eigenbasis and random-basis baselines, a Poissonian
//! maximum-likelihood estimator, and the curve fitting used to compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod protocols;
pub mod quantum;
pub mod simulator;

pub use error::{Error, Result};
