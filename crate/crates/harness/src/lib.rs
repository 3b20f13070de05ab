//! Experiment harness for `nykpca`: data loading, configured sweeps,
//! benchmarks and result files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod results;

pub use config::{ExperimentConfig, Method, Overrides, SamplingConfig};
pub use error::{HarnessError, Result};
pub use experiment::run_experiment;
