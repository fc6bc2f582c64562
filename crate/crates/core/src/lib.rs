#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Weighted soft Bayesian additive regression trees for asynchronous
//! longitudinal data.

pub mod artifact;
pub mod cli;
pub mod error;
pub mod features;
pub mod longitudinal;
pub mod numeric;
pub mod regression;
pub mod report;
pub mod sampler;
pub mod simulation;
pub mod soft_tree;

pub use error::{Error, ErrorClass, Result};
pub use features::FeatureMatrix;
