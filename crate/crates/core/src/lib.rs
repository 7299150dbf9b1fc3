//! CKY chart parsing for binarized PCFGs with prior-weighted beam
//! thresholding, global thresholding over the chart, and multiple-pass
//! parsing through a coarse grammar, plus a coordinate-ascent optimizer for
//! the thresholding parameters.

pub mod chart;
pub mod cli;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod logprob;
pub mod multipass;
pub mod optimizer;
pub mod synth;
pub mod thresholding;

pub use error::{Error, Result};
