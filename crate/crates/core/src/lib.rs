//! Generator matching toolkit: Bregman losses, conditional probability paths,
//! linear parameterizations of generators, and simulation of the resulting
//! flows and jump processes.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod editflows;
pub mod error;
pub mod experiments;
pub mod flowpaths;
pub mod jumpkernels;
pub mod linparam;
pub mod losses;
pub mod model;
pub mod path;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod suites;
pub mod timeweight;

pub use error::{Error, Result};
