//! Mutual-information learning for classifiers.
//!
//! The crate is organized by concern:
//!
//! - [`info`]: entropies, cross entropies and divergences of finite distributions.
//! - [`batch`]: empirical distributions of a minibatch and the plug-in MI estimate.
//! - [`losses`]: cross entropy, its LSR / CP / LC variants and the MI objective.
//! - [`nn`]: a dense ReLU network with manual backprop and SGD with momentum.
//! - [`gauss`]: the binary Gaussian data model, its MI bounds and numerical oracles.
//! - [`bounds`]: error-probability lower bounds driven by mutual information.
//! - [`data`]: IDX loading, normalization, batching and config files.
//! - [`train`]: the training loop and per-epoch metrics.

pub mod batch;
pub mod bounds;
pub mod data;
pub mod error;
pub mod gauss;
pub mod gradcheck;
pub mod info;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use info::{LogBase, ProbVector};
