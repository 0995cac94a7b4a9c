//! Gradient descent for asymmetric low-rank matrix completion.
//!
//! A rank-`r` matrix `M* = X* Y*^T` is observed on a Bernoulli sample `Omega`
//! and recovered by gradient descent on the factors `(X, Y)` from a spectral
//! initialization. Vanilla, ridge-regularized, balancing and leave-one-out
//! objectives are supported, together with the alignment metrics and
//! experiment harnesses used to study them.

pub mod error;
pub mod experiments;
pub mod init;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod sampling;
pub mod solvers;
pub mod svd;
pub mod theory;

pub use error::{Error, Result};
pub use init::{loo_init, spectral_init, truncated_svd, TruncatedSvd};
pub use matrix::{DenseMatrix, Dims, FactorPair, GroundTruth};
pub use metrics::{
    balancing_norm, dist, gl_align, incoherence, procrustes_align, relative_error, AlignmentResult,
};
pub use sampling::{loo_project, project, sample_mask, LooAxis, LooSelector, ObservationMask};
pub use solvers::{
    gradient, objective, run, step, IterateTrace, Problem, RunOutput, RunStatus, SolverConfig,
    SolverVariant, TraceRecord,
};
