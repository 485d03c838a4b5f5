//! Multi-label classification from a single positive label per training image.
//!
//! The crate bundles the pieces of a small experimental lab: a dense matrix
//! and Adam optimiser ([`math`]), a three-layer MLP over frozen features
//! ([`model`]), eight training objectives ([`losses`]), pseudo-label
//! generators ([`pseudo`]), the evaluation metrics ([`metrics`]), on-disk
//! and synthetic datasets ([`data`]) and a multi-seed harness ([`harness`]).
//!
//! ```
//! use spml_core::losses::{compute, LossInput, LossKind, LossSpec};
//! use spml_core::math::DenseMatrix;
//!
//! let conf = DenseMatrix::from_rows(&[vec![0.9, 0.2, 0.1]]).unwrap();
//! let input = LossInput::new(&conf, &[0]);
//! let out = compute(&LossSpec::new(LossKind::An), &input).unwrap();
//! assert!((out.value - 0.14462).abs() < 1e-5);
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod pseudo;

pub use error::{Error, Result};
