//! Data-driven low-rank recovery and post-training MLP compression.
//!
//! Three recovery procedures are provided for the layer model
//! `Ỹ = X̌·M + G (+ E)`:
//!
//! * [`recover::rank`]: closed-form rank-constrained least squares,
//! * [`recover::convex`]: Frobenius projection onto the approximately-low-rank
//!   feasible set `Ψ(X̌)`,
//! * [`recover::relu`]: maximum likelihood under ReLU censoring.
//!
//! [`compress`] chains them into a layer-wise MLP compressor, [`synth`] builds
//! seeded planted instances, and [`harness`] runs the Monte-Carlo scaling
//! studies.

// Negated float comparisons are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compress;
pub mod error;
pub mod feasible;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod recover;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
