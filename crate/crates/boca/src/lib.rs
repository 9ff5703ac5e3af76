//! Bayesian orthogonal component analysis.
//!
//! Unsupervised recovery of an under-complete dictionary with orthonormal
//! columns and sparse Bernoulli-Gaussian sources from noisy linear mixtures,
//! using a partially collapsed Gibbs sampler: indicators are drawn with
//! amplitudes marginalized out, amplitudes are redrawn in blocks, dictionary
//! columns follow von Mises-Fisher conditionals on the sphere, and the noise
//! and sparsity hyperparameters have conjugate updates.
//!
//! The crate also ships the surrounding machinery: MMSE and marginalized-MAP
//! estimators, synthetic data generators, evaluation metrics, a
//! joint-distribution sampler-correctness harness, and an image-patch sparse
//! coding pipeline.

pub mod error;
pub mod estimators;
pub mod geweke;
pub mod io;
pub mod metrics;
pub mod model;
pub mod patches;
pub mod rng;
pub mod sampler;
pub mod synthdata;
pub mod validate;

pub use error::{Error, Result};

// Re-exported so downstream binaries use the same matrix types.
pub use nalgebra;
