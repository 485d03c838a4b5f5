//! Dense arithmetic, random numbers and the Adam optimiser.

mod adam;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{dot, matmul, matmul_nt, matmul_tn, DenseMatrix};
pub use rng::{gaussian_sample, RandomSource};
