//! Dynamic spectral backpropagation (DSBP) for dense multilayer perceptrons.
//!
//! Each layer's weight gradient is projected onto the top-k eigenvectors of
//! that layer's activation covariance before the update, and a rank-one
//! shrinkage along the dominant eigenvector damps high-curvature directions.
//! Around that core the crate carries the pieces needed to study the method
//! at desk scale:
//!
//! - [`linalg`]: dense matrices, covariance, power iteration, Jacobi oracle
//! - [`nn`]: MLP forward/backward, Hessian-vector products
//! - [`spectral`]: per-layer spectral state, projected update, intervals, pruning
//! - [`optimizers`]: DSBP, SGD, SAM and Lie-flow training loops
//! - [`extensions`]: transfer regularization and spectral meta learning
//! - [`analysis`]: SDE simulator, PAC-Bayes bound, alignment metrics, landscapes
//! - [`data`]: IDX loader, synthetic blobs, drifting streams, few-shot episodes
//! - [`harness`]: config files, metric files, plot data, the `dsbp` CLI

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
mod error;
pub mod extensions;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optimizers;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, EigenPairs};
pub use nn::{Activation, Batch, DenseLayer, Network};
pub use optimizers::{DsbpConfig, Method, TrainReport};
