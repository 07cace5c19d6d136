//! Recovery of a layer's weight matrix `M` from reconstruction targets.

pub mod convex;
pub mod lemmas;
pub mod normal;
pub mod rank;
pub mod relu;

pub use convex::{solve_constrained, ConvexRecoveryResult};
pub use rank::{solve_rank_constrained, RankRecoveryResult};
pub use lemmas::{verify_scalar_lemmas, LemmaCheck, LemmaReport};
pub use normal::log_norm_cdf;
pub use relu::{
    censored_loglik, censored_loglik_grad, solve_mle, solve_mle_with, CensoredObservation,
    MleOptions, MleResult,
};
