//! Riemannian rank-adaptive low-rank matrix completion.
//!
//! The crate solves min ½‖P_Ω(X) − P_Ω(A)‖²_F over matrices of bounded rank
//! by combining three mechanisms:
//!
//! - a fixed-rank Riemannian gradient solver with alternating
//!   Barzilai–Borwein trial steps and Zhang–Hager non-monotone line search
//!   ([`rbb`]),
//! - a rank-reduction step that truncates at the largest relative gap of the
//!   iterate's singular values ([`adaptive::detect_gap`]),
//! - a rank-increase step that searches along the best low-rank
//!   approximation of the normal component of the antigradient
//!   ([`adaptive::increase_rank`]).
//!
//! Points never leave their factored SVD form; all kernels cost
//! O(|Ω|·s + (m+n)·s²) per iteration.

pub mod adaptive;
pub mod dataio;
pub mod error;
pub mod geometry;
pub mod linop;
pub mod lowrank;
pub mod problems;
pub mod rbb;
pub mod rng;
pub mod sampled;
pub mod tsvd;

pub use adaptive::{
    detect_gap, exact_linesearch_alpha, increase_rank, reduce_rank, should_increase,
    solve_adaptive, solve_adaptive_observed, AdaptConfig, AdaptStopReason, AdaptiveObserver,
    AdaptiveOutcome, RankEvent, RankEventKind, RankTrace,
};
pub use error::{Error, Result};
pub use geometry::{
    normal_topl, project_normal, project_tangent, retract, riemannian_gradient, transport,
    NormalCorrection, NormalTopl,
};
pub use lowrank::{LowRankMatrix, TangentVector};
pub use problems::{
    gen_gaussian, gen_illconditioned, generate, initial_point, metrics, random_point, rmse,
    rmse_clipped, GroundTruth, SyntheticKind, SyntheticSpec,
};
pub use rbb::{bb_stepsize, rbb_solve, RbbConfig, SolveTrace, StopReason};
pub use sampled::{objective, residual, SampledMatrix, SparseResidual};
pub use tsvd::{truncated_svd, Tsvd, TsvdOptions};
