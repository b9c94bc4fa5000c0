//! Dense matrix arithmetic, layer kernels and seeded random streams.
//!
//! All reductions run in ascending index order so results are reproducible
//! bit-for-bit across runs and thread counts.

mod layers;
mod matrix;
mod rng;

pub use layers::{
    affine_backward, affine_forward, column_sums, dropout, relu, softmax, softmax_cross_entropy,
    AffineGrads, CrossEntropy, DropoutMask, ReluMask,
};
pub use matrix::{dot, squared_distance, Matrix};
pub use rng::{Rng, Stream};
