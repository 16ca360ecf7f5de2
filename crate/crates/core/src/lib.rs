//! Kernel tests for bias between an observational study and a randomized
//! trial, with a user tolerance and a feature-subset granularity, plus the
//! lower bound on the bias and the benchmark verdict built on them.

pub mod baselines;
pub mod biasmodel;
pub mod crossu;
pub mod dataset;
pub mod error;
pub mod kernels;
pub mod lowerbound;
pub mod nuisance;
pub mod seed;
pub mod signal;
pub mod simharness;
pub mod stats;

pub use error::{Error, Result};
