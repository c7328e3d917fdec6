//! Hessian barrier algorithm for linearly constrained, possibly nonconvex,
//! smooth optimization over `{x ≥ 0 : A x = b}`.
//!
//! The iteration is a forward step along the negative Hessian-Riemannian
//! gradient, `x⁺ = x − α P(x) H(x)⁻¹ ∇f(x)`, with a step size chosen by
//! Armijo backtracking from a bootstrap value that keeps the iterate strictly
//! positive.
//!
//! * [`kernels`]: barrier kernels `θ` and the diagonal metric they induce
//! * [`geometry`]: dual variable, reduced cost, search direction
//! * [`solver`]: the iteration itself plus an entropic mirror-descent baseline
//! * [`problems`]: problem abstraction and built-in instances
//! * [`tap`]: traffic assignment instances
//! * [`harness`]: traces, rate fitting, plots and experiment orchestration

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod tap;

pub use error::{Error, Result};
pub use geometry::{ConstraintSystem, GeometryResult};
pub use kernels::{DiagonalMetric, Kernel, KernelSpec};
pub use problems::{Objective, Problem};
