//! Dense linear algebra used throughout the crate.
//!
//! All arithmetic is `f64`. SVDs are computed with `faer` and post-processed
//! into a deterministic sign convention.

mod decomp;
pub mod io;
mod matrix;

pub use decomp::{
    gram_sqrt_pair, is_approx_rank, norms, nuclear_norm, pinv, svd, truncate_rank, Norms,
    SvdFactors, DEFAULT_RCOND, RANK_TOL,
};
pub use matrix::DenseMatrix;
