//! Pool-based active learning with manifold-preserving trajectory sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`ndcore`]: dense matrices, layer forward/backward kernels, seeded RNG streams.
//! - [`mmd`]: RBF kernels and the biased MMD² estimator with its gradient.
//! - [`model`]: the MLP backbone with an explicit feature-extractor split.
//! - [`trainer`]: SGD on cross-entropy plus λ·MMD² with a cyclic learning rate
//!   that harvests checkpoints from the optimisation trajectory.
//! - [`acquisition`]: trajectory-averaged entropy and the baseline strategies.
//! - [`alcore`]: pool bookkeeping and the multi-round experiment loop.
//! - [`dataio`]: IDX / CSV loaders, synthetic blobs, standardisation.
//! - [`config`], [`results`], [`gradcheck`]: experiment configuration, output
//!   files and the finite-difference verification suites used by the CLI.

pub mod acquisition;
pub mod alcore;
pub mod config;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod mmd;
pub mod model;
pub mod ndcore;
pub mod results;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use ndcore::{Matrix, Rng, Stream};
