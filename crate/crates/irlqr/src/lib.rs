//! Online linear quadratic regulation with uncertainty-directed exploration.
//!
//! The crate implements an online LQR learner that keeps the synthesis step a
//! plain (generalized) Riccati solve: parameter uncertainty enters only as a
//! positive semidefinite reduction of the stage cost, clipped so that the
//! modified cost stays positive definite. Around that core sit
//!
//! * [`numkern`] — dense kernels for small matrices: discrete Lyapunov and
//!   generalized Riccati fixed-point solvers, spectral clipping, Frobenius-ball
//!   projection, log-determinants, and geometric decay certificates;
//! * [`control`] — linear system simulation, stage and ergodic costs,
//!   closed-loop covariances, and seeded noise streams;
//! * [`estimator`] — projected regularized least squares with rank-one
//!   covariance updates and a self-normalized confidence radius;
//! * [`algorithm`] — the intrinsic-reward learner itself: bonus construction,
//!   optimistic synthesis, and information-gain epoching;
//! * [`baselines`] — certainty equivalence with persistent excitation, and
//!   Thompson sampling, sharing the estimator and epoching machinery;
//! * [`harness`] — config loading, seeded batch execution, regret traces,
//!   bootstrap summaries, and CSV emission. The `irlqr` binary wraps it.

pub mod algorithm;
pub mod baselines;
pub mod control;
pub mod estimator;
pub mod harness;
pub mod numkern;
pub mod trace;

pub use crate::algorithm::{run_irlqr, MinEpoch, RunConfig};
pub use crate::control::LinearSystem;
pub use crate::numkern::{NumError, SymMatrix};
pub use crate::trace::{RegretTrace, RunError};
