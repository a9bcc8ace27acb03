//! Bayesian optimization with Shapley attributions of the acquisition function.
pub mod acquisition;
pub mod benchmarks;
pub mod bo;
pub mod error;
pub mod explain;
pub mod harness;
pub(crate) mod numfmt;
pub mod seeds;
pub mod session;
pub mod shapley;
pub mod space;
pub mod surrogate;
pub mod tree;
pub use error::{Error, Result};
