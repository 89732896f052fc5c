//! Generalized GANs: adversarial training of dense ReLU generators whose noise
//! input passes through a learnable square matrix `B`.
//!
//! Row-group sparsity on `B` selects the input dimension, an identity penalty
//! on hidden layers collapses redundant depth, and an entrywise L1 penalty
//! sparsifies the remaining weights. Penalty weights follow an expand-then-shrink
//! schedule and small parameters are hard-truncated.
//!
//! Modules, bottom-up:
//! - [`numcore`]: matrices, the gradient tape, and affine-ReLU chains.
//! - [`nets`]: generator and discriminator models, spectral normalization, checkpoints.
//! - [`penalties`]: the regularizers, their subgradients, truncation and the schedule.
//! - [`trainer`]: Adam, the adversarial losses and the training loop.
//! - [`data`]: synthetic benchmarks and CSV ingestion.
//! - [`metrics`]: MMD, Fréchet distance and the selection summaries.
//! - [`harness`]: configuration, λ search, replicated experiments and sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nets;
pub mod numcore;
pub mod penalties;
pub mod trainer;

pub use error::{Error, Result};
pub use numcore::{DenseMatrix, DenseVector};
