//! Sparse linear regression, a block-structured linear MDP simulator, and
//! fitted-Q estimators that restrict each stage to the coordinates relevant
//! for the reward, plus the benchmark harness that compares them against a
//! naive thresholded baseline.

// Parameter checks are written as `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod evaluation;
pub mod fqi;
pub mod io;
pub mod linalg;
pub mod mdp;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
