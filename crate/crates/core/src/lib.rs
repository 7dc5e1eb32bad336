//! Flexible EM imputation for mixtures of elliptical distributions with
//! missing data, plus a Gaussian-mixture EM baseline, K-means/BIC model
//! selection, synthetic benchmark generation and a Monte-Carlo evaluation
//! harness.

// `!(x > 0.0)` is used on purpose so that NaN fails the check; numeric
// kernels index several parallel arrays in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub(crate) mod estep;
pub mod eval;
pub mod fem;
pub mod gmm;
pub mod init;
pub mod io;
pub mod linalg;
pub mod method;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synth;

pub use data::{extract_blocks, partition_row, IndexPartition, MaskedDataset, ScatterView};
pub use error::{Error, Result};
pub use method::{fit_method, FittedModel, Method, MethodFit};
pub use linalg::{mahalanobis, spd_solve_and_logdet};
pub use model::{
    FitConfig, FitReport, GaussianMixtureModel, MixtureModel, ModelJson, Responsibilities,
};
