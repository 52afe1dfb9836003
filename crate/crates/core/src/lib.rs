//! Fast approximate (multi-output) Gaussian process regression on truncated Mercer expansions.
//!
//! The Gram matrix `K_XX` is replaced by `Φ Λ Φᵀ` with `n` eigenpairs, so fitting,
//! prediction and hyperparameter gradients cost `O(N n²)` instead of `O(N³)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
mod engine;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod gp;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod mercer;
pub mod multioutput;
pub mod optimize;
pub mod special;
mod stats;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use gp::{
    fit, lml_and_grads, lml_grad_fast, lml_grad_general, log_marginal_likelihood, CovarianceMode, Dataset,
    FastStats, FittedModel, ModelSpec, NoiseVariance, Posterior,
};
pub use kernel::{kernel_eval, kernel_grad, Hyper, KernelKind, KernelParams};
pub use mercer::{make_basis, BasisMatrix, MercerBasis};
pub use multioutput::{
    commutation_matrix, kf_grad, mo_fit, mo_inverse_separable, mo_lml_and_grads, mo_predict, CoregionalizationMatrix,
    MODataset, MOFittedModel, MONoise,
};
pub use transform::InputTransform;
pub use optimize::{optimize, OptimizerConfig, ParamTransform, ParamVector, TrainingTrace};
pub use train::{mo_train, train, train_fast_path, train_general, TrainPath};
