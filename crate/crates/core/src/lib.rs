//! Anytime-valid sequential inference.
//!
//! Streaming e-processes, anytime p-values, sequential tests and confidence
//! sequences built from nonnegative (super)martingales and max-martingales,
//! together with an exact rational probability-tree engine and a Monte Carlo
//! harness that checks the validity properties these objects promise.

// `!(a < b)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod instruments;
pub mod model;
pub mod montecarlo;
pub mod rng;
pub mod symmetry;
pub mod tree;

pub use error::{Error, Result};
pub use instruments::{ConfidenceSequence, EProcess, PProcess, SequentialTest};
pub use model::{NullModel, SamplePath, StopTime, StoppingRule, VarianceRule};
