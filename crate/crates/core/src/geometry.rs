//! Riemannian projection of the gradient onto the tangent space `ker A`.
//!
//! For a diagonal metric `H = diag(θ''_i(x_i))` the steepest-descent
//! direction is obtained without forming the projector:
//!
//! ```text
//! y = (A H⁻¹ Aᵀ)⁻¹ A H⁻¹ ∇f      dual variable
//! r = ∇f − Aᵀ y                  reduced cost
//! v = −H⁻¹ r                     search direction
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::DiagonalMetric;

const RANK_TOL: f64 = 1e-10;

/// Equality constraints `A x = b` with `A` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Row `j` is the indicator of `blocks[j]`; blocks are disjoint.
    blocks: Option<Vec<Vec<usize>>>,
}

impl ConstraintSystem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("constraint data must be finite".into()));
        }
        let blocks = detect_blocks(&a);
        if blocks.is_none() && a.nrows() > 0 {
            let rank = numerical_rank(&a);
            if rank < a.nrows() {
                return Err(Error::RankDeficient { rank, rows: a.nrows() });
            }
        }
        Ok(Self { a, b, blocks })
    }

    /// No equality constraints: the feasible region is the orthant.
    pub fn unconstrained(n: usize) -> Self {
        Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0), blocks: Some(Vec::new()) }
    }

    /// `Σ_{i ∈ blocks[j]} x_i = totals[j]` for disjoint coordinate blocks.
    pub fn block_simplex(n: usize, blocks: Vec<Vec<usize>>, totals: Vec<f64>) -> Result<Self> {
        if blocks.len() != totals.len() {
            return Err(Error::DimensionMismatch { expected: blocks.len(), got: totals.len() });
        }
        let mut seen = vec![false; n];
        let mut a = DMatrix::zeros(blocks.len(), n);
        for (j, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidParameter(format!("block {j} is empty")));
            }
            for &i in block {
                if i >= n || seen[i] {
                    return Err(Error::InvalidParameter(format!("block {j} has invalid or repeated coordinate {i}")));
                }
                seen[i] = true;
                a[(j, i)] = 1.0;
            }
        }
        Self::new(a, DVector::from_vec(totals))
    }

    /// The standard simplex `Σ x_i = 1`.
    pub fn simplex(n: usize) -> Self {
        Self::block_simplex(n, vec![(0..n).collect()], vec![1.0]).expect("simplex is well formed")
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn blocks(&self) -> Option<&[Vec<usize>]> {
        self.blocks.as_deref()
    }

    pub fn is_block_simplex(&self) -> bool {
        self.blocks.is_some()
    }

    /// `A x`
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.blocks {
            Some(blocks) => DVector::from_iterator(blocks.len(), blocks.iter().map(|blk| blk.iter().map(|&i| x[i]).sum())),
            None => &self.a * x,
        }
    }

    /// `Aᵀ y`
    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.blocks {
            Some(blocks) => {
                let mut out = DVector::zeros(self.n());
                for (blk, &yj) in blocks.iter().zip(y.iter()) {
                    for &i in blk {
                        out[i] = yj;
                    }
                }
                out
            }
            None => self.a.tr_mul(y),
        }
    }

    /// `‖A x − b‖∞`
    pub fn residual_inf(&self, x: &DVector<f64>) -> f64 {
        (self.apply(x) - &self.b).amax()
    }

    /// Feasibility tolerance `10⁻⁸·(1 + ‖b‖∞)`.
    pub fn feasibility_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.b.amax())
    }

    /// Upper bound on each coordinate implied by nonnegative rows of `A`.
    ///
    /// Coordinates not bounded by any such row get `+∞`.
    pub fn coordinate_upper_bounds(&self) -> Vec<f64> {
        let mut bounds = vec![f64::INFINITY; self.n()];
        for j in 0..self.m() {
            let row = self.a.row(j);
            if self.b[j] < 0.0 || row.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (i, &aji) in row.iter().enumerate() {
                if aji > 0.0 {
                    bounds[i] = bounds[i].min(self.b[j] / aji);
                }
            }
        }
        bounds
    }
}

fn detect_blocks(a: &DMatrix<f64>) -> Option<Vec<Vec<usize>>> {
    let mut owner = vec![false; a.ncols()];
    let mut blocks = Vec::with_capacity(a.nrows());
    for j in 0..a.nrows() {
        let mut block = Vec::new();
        for (i, &v) in a.row(j).iter().enumerate() {
            if v == 1.0 {
                if owner[i] {
                    return None;
                }
                owner[i] = true;
                block.push(i);
            } else if v != 0.0 {
                return None;
            }
        }
        if block.is_empty() {
            return None;
        }
        blocks.push(block);
    }
    Some(blocks)
}

/// Number of singular values above `10⁻¹⁰·σ_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Dual variable, reduced cost and search direction at one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryResult {
    pub dual_y: DVector<f64>,
    pub reduced_cost_r: DVector<f64>,
    pub direction_v: DVector<f64>,
    /// `‖v‖²_x = vᵀ H v`
    pub v_norm_x_sq: f64,
}

fn check_metric(cs: &ConstraintSystem, metric: &DiagonalMetric, grad: &DVector<f64>) -> Result<()> {
    if metric.len() != cs.n() {
        return Err(Error::DimensionMismatch { expected: cs.n(), got: metric.len() });
    }
    if grad.len() != cs.n() {
        return Err(Error::DimensionMismatch { expected: cs.n(), got: grad.len() });
    }
    Ok(())
}

/// Solves `(A H⁻¹ Aᵀ) y = A H⁻¹ ∇f`.
pub fn dual_variable(cs: &ConstraintSystem, metric: &DiagonalMetric, grad: &DVector<f64>) -> Result<DVector<f64>> {
    check_metric(cs, metric, grad)?;
    let hinv = &metric.h_inv_diag;
    if cs.m() == 0 {
        return Ok(DVector::zeros(0));
    }
    if let Some(blocks) = cs.blocks() {
        let mut y = DVector::zeros(blocks.len());
        for (j, blk) in blocks.iter().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for &i in blk {
                num += hinv[i] * grad[i];
                den += hinv[i];
            }
            if !(den > 0.0) {
                return Err(Error::SingularMetricSystem);
            }
            y[j] = num / den;
        }
        return Ok(y);
    }

    let a = cs.a();
    let mut scaled = a.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= hinv[i];
    }
    let gram = &scaled * a.transpose();
    let rhs = &scaled * grad;
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            let m = cs.m();
            let jitter = 1e-12 * gram.trace() / m as f64;
            (gram + DMatrix::identity(m, m) * jitter).cholesky().ok_or(Error::SingularMetricSystem)?
        }
    };
    let mut y = chol.solve(&rhs);
    // One refinement step on the tangency residual A H⁻¹ (∇f − Aᵀy).
    let correction = chol.solve(&(&scaled * (grad - a.transpose() * &y)));
    y += correction;
    Ok(y)
}

/// `r = ∇f − Aᵀ y`
pub fn reduced_cost(grad: &DVector<f64>, cs: &ConstraintSystem, dual_y: &DVector<f64>) -> Result<DVector<f64>> {
    if dual_y.len() != cs.m() {
        return Err(Error::DimensionMismatch { expected: cs.m(), got: dual_y.len() });
    }
    if grad.len() != cs.n() {
        return Err(Error::DimensionMismatch { expected: cs.n(), got: grad.len() });
    }
    if cs.m() == 0 {
        return Ok(grad.clone());
    }
    Ok(grad - cs.apply_transpose(dual_y))
}

/// Negative Riemannian gradient `v = −P(x) H(x)⁻¹ ∇f(x)`.
pub fn search_direction(cs: &ConstraintSystem, metric: &DiagonalMetric, grad: &DVector<f64>) -> Result<GeometryResult> {
    let dual_y = dual_variable(cs, metric, grad)?;
    let reduced_cost_r = reduced_cost(grad, cs, &dual_y)?;
    let direction_v = -reduced_cost_r.component_mul(&metric.h_inv_diag);
    let v_norm_x_sq = reduced_cost_r
        .iter()
        .zip(metric.h_inv_diag.iter())
        .map(|(r, hi)| r * r * hi)
        .sum();
    Ok(GeometryResult { dual_y, reduced_cost_r, direction_v, v_norm_x_sq })
}

/// Complementarity residual `‖diag(x) r(x)‖∞`.
pub fn kkt_residual(x: &DVector<f64>, result: &GeometryResult) -> f64 {
    x.iter()
        .zip(result.reduced_cost_r.iter())
        .map(|(xi, ri)| (xi * ri).abs())
        .fold(0.0, f64::max)
}

/// `max(0, −min_i r_i)`: how far the reduced cost is from being nonnegative.
pub fn dual_feasibility_violation(result: &GeometryResult) -> f64 {
    result.reduced_cost_r.iter().fold(0.0f64, |acc, &r| acc.max(-r))
}
