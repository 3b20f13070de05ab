//! Kernel principal component analysis, exact and Nystrom-approximated.
//!
//! The numerical core is generic over the scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); the aliases at the crate root fix it to `f64`, which
//! is what every documented tolerance assumes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod kernel;
pub mod kpca;
pub mod numerics;
pub mod persist;
pub mod rng;
pub mod sampling;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use kernel::{eval_kernel, gram, gram_sym, Assembly, Source};
pub use kpca::{fit_ekpca, fit_nystrom, project_ekpca, project_nystrom, recon_error_oracle};

pub type KernelSpec = kernel::KernelSpec<f64>;
pub type Dataset = kernel::Dataset<f64>;
pub type GramBlock = kernel::GramBlock<f64>;
pub type EigenDecomposition = numerics::EigenDecomposition<f64>;
pub type LeverageScores = sampling::LeverageScores<f64>;
pub type EkpcaModel = kpca::EkpcaModel<f64>;
pub type NystromModel = kpca::NystromModel<f64>;
pub type SpectrumSpec = analysis::SpectrumSpec<f64>;
pub type BoundReport = analysis::BoundReport<f64>;
