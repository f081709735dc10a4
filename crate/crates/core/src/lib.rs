//! Weakly supervised progression detection on synthetic longitudinal
//! thickness profiles: cohort simulation, windowing and pseudo-labelling,
//! a small recurrent classifier with exact gradients, training schemes,
//! clinical baselines and evaluation statistics.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod nnet;
pub mod rng;
pub mod sequences;
pub mod simcohort;
pub mod textio;
pub mod training;

pub use error::{Error, ErrorKind, Result};
