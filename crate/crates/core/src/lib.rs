//! Fractional walk-on-spheres toolkit.
//!
//! Monte Carlo and neural-surrogate solvers for the fractional Poisson problem
//! `(-Δ)^{α/2} u = f` in a bounded domain `Ω ⊂ R^d`, `u = g` on `R^d \ Ω`.
//!
//! * [`walker`] simulates the ball-to-ball jump chain of the isotropic
//!   α-stable process and builds the plain, capped and surrogate-completed
//!   estimators.
//! * [`surrogate`] and [`trainer`] fit a residual MLP to estimator targets,
//!   either once up front or through a refreshed supervision buffer.
//! * [`problems`] holds benchmark fixtures with closed-form solutions.

// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod problems;
pub mod rng;
pub mod sampler;
pub mod specfun;
pub mod surrogate;
pub mod trainer;
pub mod walker;

pub use error::{Error, Result};
pub use geometry::{Domain, Shape};
pub use problems::{BenchmarkId, BenchmarkKind};
pub use rng::Stream;
pub use sampler::{JumpLaw, StepSample};
pub use surrogate::{OptimizerState, Surrogate};
pub use trainer::{Buffer, BufferEntry, TrainPlan, TrainReport};
pub use walker::{Problem, WalkOutcome};
