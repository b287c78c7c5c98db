//! Scalable probabilistic operator learning for parametric PDEs.
//!
//! The model is a Gaussian process over augmented inputs (function sample,
//! spatial coordinate) made tractable three ways at once: the covariance
//! factorizes as a Kronecker product of a feature-space kernel and a spatial
//! kernel, the spatial kernel is truncated to K nearest neighbors, and the
//! feature space is handled with an inducing-point variational
//! approximation. A wavelet neural operator supplies both the non-stationary
//! prior mean and the latent embedding the feature kernel is evaluated in.
//!
//! Crate layout mirrors those pieces:
//! - [`linalg`]: dense/banded factorizations, Kronecker matvecs, adjoints
//! - [`signal`]: radix-2 FFT, wavelet filter banks, circular convolution
//! - [`kernel`]: base kernels, KNN sparse spatial kernel, feature kernel
//! - [`wno`]: the wavelet neural operator (forward + reverse-mode backward)
//! - [`svgp`]: variational state, ELBO, predictive moments, exact reference
//! - [`train`]: minibatch training loop with AdamW
//! - [`data`]: grids, GRF/Burgers/advection generation, dataset IO
//! - [`checkpoint`]: model serialization
//! - [`metrics`]: relative L2 and coverage evaluation

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod kernel;
pub mod linalg;
pub mod memtrack;
pub mod metrics;
pub mod signal;
pub mod svgp;
pub mod train;
pub mod wno;

pub use error::{Error, Result};
