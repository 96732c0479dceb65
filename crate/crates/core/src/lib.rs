//! Active-learning reliability analysis with Gaussian-process surrogates.
//!
//! The crate estimates failure probabilities of expensive limit-state
//! functions by growing a training set one sample at a time. Each candidate
//! in a Monte Carlo pool is scored by the surrogate's predictive mean and
//! standard deviation, and the next sample is chosen either by a classical
//! learning function (U, EFF) or from the non-dominated front of the
//! exploitation/exploration trade-off (knee point, compromise solution, or
//! the reliability-driven adaptive rule).

// `!(x > 0.0)` style guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gp;
pub mod linalg;
pub mod lsf;
pub mod normal;
pub mod optim;
pub mod reliability;
pub mod pareto;
pub mod acquisition;
pub mod sampling;

pub use error::{Error, Result};
