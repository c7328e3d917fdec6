//! Metric-inducing kernels and the diagonal Hessian-Riemannian metric.
//!
//! A kernel is a convex scalar function `θ` on `(0, ∞)` with
//! `θ'(t) → -∞` as `t → 0+`. Every built-in kernel has a second derivative
//! of the form `θ''(t) = β + t^(-q)` where `β ≥ 0` is the quadratic
//! regularization weight and `q ∈ [1, 2]` is the steepness order:
//!
//! | kernel             | `θ(t)`                                   | `q`  |
//! |--------------------|------------------------------------------|------|
//! | Gibbs              | `½βt² + t log t`                         | 1    |
//! | Tsallis, `p∈(1,2)` | `½βt² + t^(2-p) / ((1-p)(2-p))`          | `p`  |
//! | Burg               | `½βt² - log t`                           | 2    |
//! | mixture `γ`        | `½βt²` + Gibbs / power / Burg branch      | `2γ` |
//!
//! Lower bounds such as `inf θ''` are taken over a working range
//! `(0, upper]`, usually the largest value a coordinate can reach on the
//! feasible set. On an unbounded range a pure (`β = 0`) kernel has no
//! positive curvature floor.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized kernel selection, e.g. `{"type": "tsallis", "beta": 0, "p": 1.5}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Gibbs {
        #[serde(default)]
        beta: f64,
    },
    Tsallis {
        #[serde(default)]
        beta: f64,
        p: f64,
    },
    Burg {
        #[serde(default)]
        beta: f64,
    },
    Mixture {
        #[serde(default)]
        beta: f64,
        gamma: f64,
    },
}

impl KernelSpec {
    pub fn regularization(&self) -> f64 {
        match *self {
            KernelSpec::Gibbs { beta }
            | KernelSpec::Tsallis { beta, .. }
            | KernelSpec::Burg { beta }
            | KernelSpec::Mixture { beta, .. } => beta,
        }
    }

    /// Builds the kernel on the working range `(0, upper]`.
    pub fn build(&self, upper: f64) -> Result<Kernel> {
        let kernel = match *self {
            KernelSpec::Gibbs { beta } => Kernel::gibbs(beta)?,
            KernelSpec::Tsallis { beta, p } => Kernel::tsallis(beta, p)?,
            KernelSpec::Burg { beta } => Kernel::burg(beta)?,
            KernelSpec::Mixture { beta, gamma } => Kernel::mixture(beta, gamma)?,
        };
        kernel.with_working_range(upper)
    }

    /// One kernel per coordinate, each on its own working range.
    pub fn build_all(&self, uppers: &[f64]) -> Result<Vec<Kernel>> {
        uppers.iter().map(|&u| self.build(u)).collect()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gibbs { beta: 0.0 }
    }
}

/// A metric-inducing kernel together with its working range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    spec: KernelSpec,
    working_range_upper: f64,
    epsilon_range: Option<f64>,
}

fn check_regularization(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("kernel regularization must be >= 0, got {beta}")))
    }
}

impl Kernel {
    pub fn gibbs(beta: f64) -> Result<Self> {
        check_regularization(beta)?;
        Ok(Self::from_spec(KernelSpec::Gibbs { beta }))
    }

    pub fn tsallis(beta: f64, p: f64) -> Result<Self> {
        check_regularization(beta)?;
        if !(p > 1.0 && p < 2.0) {
            return Err(Error::InvalidParameter(format!("Tsallis exponent must lie in (1, 2), got {p}")));
        }
        Ok(Self::from_spec(KernelSpec::Tsallis { beta, p }))
    }

    pub fn burg(beta: f64) -> Result<Self> {
        check_regularization(beta)?;
        Ok(Self::from_spec(KernelSpec::Burg { beta }))
    }

    /// Homotopy between Gibbs (`γ = 1/2`) and Burg (`γ = 1`); `θ'' = β + t^(-2γ)`.
    pub fn mixture(beta: f64, gamma: f64) -> Result<Self> {
        check_regularization(beta)?;
        if !(0.5..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("mixture gamma must lie in [1/2, 1], got {gamma}")));
        }
        Ok(Self::from_spec(KernelSpec::Mixture { beta, gamma }))
    }

    fn from_spec(spec: KernelSpec) -> Self {
        Self { spec, working_range_upper: f64::INFINITY, epsilon_range: None }
    }

    pub fn with_working_range(mut self, upper: f64) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::InvalidParameter(format!("working range upper bound must be positive, got {upper}")));
        }
        self.working_range_upper = upper;
        Ok(self)
    }

    /// Overrides the interval `(0, ε)` on which the steepness sandwich is declared.
    pub fn with_epsilon_range(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon range must lie in (0, 1), got {eps}")));
        }
        self.epsilon_range = Some(eps);
        Ok(self)
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn regularization(&self) -> f64 {
        self.spec.regularization()
    }

    pub fn working_range_upper(&self) -> f64 {
        self.working_range_upper
    }

    /// Steepness order `q` in `θ''(t) = β + t^(-q)`.
    pub fn steepness_order(&self) -> f64 {
        match self.spec {
            KernelSpec::Gibbs { .. } => 1.0,
            KernelSpec::Tsallis { p, .. } => p,
            KernelSpec::Burg { .. } => 2.0,
            KernelSpec::Mixture { gamma, .. } => 2.0 * gamma,
        }
    }

    pub fn theta(&self, t: f64) -> f64 {
        let reg = 0.5 * self.regularization() * t * t;
        let core = match self.spec {
            KernelSpec::Gibbs { .. } => t * t.ln(),
            KernelSpec::Tsallis { p, .. } => t.powf(2.0 - p) / ((1.0 - p) * (2.0 - p)),
            KernelSpec::Burg { .. } => -t.ln(),
            KernelSpec::Mixture { gamma, .. } => {
                if gamma == 0.5 {
                    t * t.ln() - t
                } else if gamma == 1.0 {
                    -t.ln()
                } else {
                    t.powf(2.0 * (1.0 - gamma)) / (2.0 * (1.0 - gamma) * (1.0 - 2.0 * gamma))
                }
            }
        };
        reg + core
    }

    pub fn theta_prime(&self, t: f64) -> f64 {
        let reg = self.regularization() * t;
        let core = match self.spec {
            KernelSpec::Gibbs { .. } => t.ln() + 1.0,
            KernelSpec::Tsallis { p, .. } => t.powf(1.0 - p) / (1.0 - p),
            KernelSpec::Burg { .. } => -1.0 / t,
            KernelSpec::Mixture { gamma, .. } => {
                if gamma == 0.5 {
                    t.ln()
                } else if gamma == 1.0 {
                    -1.0 / t
                } else {
                    t.powf(1.0 - 2.0 * gamma) / (1.0 - 2.0 * gamma)
                }
            }
        };
        reg + core
    }

    pub fn theta_second(&self, t: f64) -> f64 {
        let core = match self.spec {
            KernelSpec::Gibbs { .. } => 1.0 / t,
            KernelSpec::Burg { .. } => 1.0 / (t * t),
            _ => t.powf(-self.steepness_order()),
        };
        self.regularization() + core
    }

    /// `inf θ''` over the working range.
    pub fn beta(&self) -> f64 {
        let u = self.working_range_upper;
        if u.is_finite() {
            self.regularization() + u.powf(-self.steepness_order())
        } else {
            self.regularization()
        }
    }

    /// `inf t·θ''(t)` over the working range.
    pub fn epsilon(&self) -> f64 {
        let q = self.steepness_order();
        let reg = self.regularization();
        let u = self.working_range_upper;
        if q == 1.0 {
            return 1.0;
        }
        let g = |t: f64| reg * t + t.powf(1.0 - q);
        let t_star = if reg > 0.0 { ((q - 1.0) / reg).powf(1.0 / q) } else { f64::INFINITY };
        let t_min = t_star.min(u);
        if t_min.is_finite() {
            g(t_min)
        } else {
            0.0
        }
    }

    /// Moderate-steepness exponent `ω`.
    pub fn omega(&self) -> f64 {
        match self.spec {
            KernelSpec::Gibbs { .. } => 0.5,
            KernelSpec::Tsallis { .. } | KernelSpec::Burg { .. } => 1.0,
            KernelSpec::Mixture { gamma, .. } => gamma,
        }
    }

    /// Right end of the interval `(0, ε)` on which `m/s ≤ θ''(s) ≤ M/s^(2ω)` holds.
    pub fn epsilon_range(&self) -> f64 {
        self.epsilon_range.unwrap_or_else(|| self.working_range_upper.min(1.0) / 2.0)
    }

    /// Constants `(m, M)` of the steepness sandwich on `(0, epsilon_range)`.
    pub fn steepness_constants(&self) -> (f64, f64) {
        let e = self.epsilon_range();
        let q = self.steepness_order();
        let two_omega = 2.0 * self.omega();
        // s·θ''(s) = βs + s^(1-q) ≥ e^(1-q) and s^(2ω)·θ''(s) = βs^(2ω) + s^(2ω-q) ≤ βe^(2ω) + e^(2ω-q)
        let m = e.powf(1.0 - q);
        let big_m = self.regularization() * e.powf(two_omega) + e.powf(two_omega - q);
        (m, big_m)
    }
}

/// Minimum working-range curvature over a list of per-coordinate kernels.
pub fn min_beta(kernels: &[Kernel]) -> f64 {
    kernels.iter().map(Kernel::beta).fold(f64::INFINITY, f64::min)
}

/// Largest moderate-steepness exponent over a list of kernels.
pub fn max_omega(kernels: &[Kernel]) -> f64 {
    kernels.iter().map(Kernel::omega).fold(0.5, f64::max)
}

/// `H(x) = diag(θ''_i(x_i))` and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMetric {
    pub h_diag: DVector<f64>,
    /// `1/θ''_i(x_i)`, with `1/∞ = 0`.
    pub h_inv_diag: DVector<f64>,
}

impl DiagonalMetric {
    pub fn from_diag(h_diag: DVector<f64>) -> Self {
        let h_inv_diag = h_diag.map(|h| if h.is_infinite() { 0.0 } else { 1.0 / h });
        Self { h_diag, h_inv_diag }
    }

    pub fn len(&self) -> usize {
        self.h_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_diag.is_empty()
    }

    /// `‖z‖²_x = zᵀ H z`.
    pub fn norm_sq(&self, z: &DVector<f64>) -> f64 {
        self.h_diag.iter().zip(z.iter()).map(|(h, zi)| h * zi * zi).sum()
    }
}

/// Evaluates the metric at a strictly positive point.
pub fn metric_at(kernels: &[Kernel], x: &DVector<f64>) -> Result<DiagonalMetric> {
    if kernels.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: kernels.len(), got: x.len() });
    }
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::NotInterior { index, value });
    }
    let h = DVector::from_iterator(x.len(), kernels.iter().zip(x.iter()).map(|(k, &xi)| k.theta_second(xi)));
    Ok(DiagonalMetric::from_diag(h))
}
