//! Problem abstraction and built-in instances.
//!
//! A [`Problem`] couples a smooth objective with equality constraints
//! `A x = b` over the nonnegative orthant. Box-constrained test functions
//! are brought into this standard form by [`lift_box`], which pairs every
//! original coordinate with a slack variable.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConstraintSystem;
use crate::rng;

/// Smallest Lipschitz constant handed to the solver; linear objectives have `L = 0`.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// A twice-differentiable objective.
pub trait Objective: Send + Sync {
    fn dimension(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Dense Hessian, when cheaply available.
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub x: Option<DVector<f64>>,
    pub f: f64,
}

/// Objective, constraints and metadata for one optimization instance.
#[derive(Clone)]
pub struct Problem {
    name: String,
    objective: Arc<dyn Objective>,
    constraints: ConstraintSystem,
    lipschitz_l: f64,
    known_optimum: Option<KnownOptimum>,
    start: Option<DVector<f64>>,
    lift: Option<BoxLift>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("n", &self.dimension())
            .field("m", &self.constraints.m())
            .field("lipschitz_l", &self.lipschitz_l)
            .field("known_optimum", &self.known_optimum)
            .finish()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        objective: Arc<dyn Objective>,
        constraints: ConstraintSystem,
        lipschitz_l: f64,
    ) -> Result<Self> {
        if objective.dimension() != constraints.n() {
            return Err(Error::DimensionMismatch { expected: constraints.n(), got: objective.dimension() });
        }
        if !(lipschitz_l >= 0.0) || !lipschitz_l.is_finite() {
            return Err(Error::InvalidParameter(format!("Lipschitz constant must be finite and >= 0, got {lipschitz_l}")));
        }
        Ok(Self {
            name: name.into(),
            objective,
            constraints,
            lipschitz_l: lipschitz_l.max(LIPSCHITZ_FLOOR),
            known_optimum: None,
            start: None,
            lift: None,
        })
    }

    pub fn with_known_optimum(mut self, opt: KnownOptimum) -> Self {
        self.known_optimum = Some(opt);
        self
    }

    pub fn with_start(mut self, start: DVector<f64>) -> Self {
        self.start = Some(start);
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz_l = l.max(LIPSCHITZ_FLOOR);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.constraints.n()
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn constraints(&self) -> &ConstraintSystem {
        &self.constraints
    }

    pub fn lipschitz_l(&self) -> f64 {
        self.lipschitz_l
    }

    pub fn known_optimum(&self) -> Option<&KnownOptimum> {
        self.known_optimum.as_ref()
    }

    pub fn start(&self) -> Option<&DVector<f64>> {
        self.start.as_ref()
    }

    pub fn lift(&self) -> Option<&BoxLift> {
        self.lift.as_ref()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.objective.gradient(x)
    }

    pub fn coordinate_upper_bounds(&self) -> Vec<f64> {
        self.constraints.coordinate_upper_bounds()
    }
}

/// `f(x) = ½ xᵀ Q x + cᵀ x`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub q_matrix: DMatrix<f64>,
    pub c_vector: DVector<f64>,
}

impl QuadraticObjective {
    pub fn new(q_matrix: DMatrix<f64>, c_vector: DVector<f64>) -> Result<Self> {
        if !q_matrix.is_square() || q_matrix.nrows() != c_vector.len() {
            return Err(Error::DimensionMismatch { expected: c_vector.len(), got: q_matrix.nrows() });
        }
        let scale = q_matrix.amax().max(1.0);
        if (&q_matrix - q_matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        Ok(Self { q_matrix, c_vector })
    }
}

impl Objective for QuadraticObjective {
    fn dimension(&self) -> usize {
        self.c_vector.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_matrix * x)) + self.c_vector.dot(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q_matrix * x + &self.c_vector
    }

    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.q_matrix.clone())
    }
}

/// Largest-magnitude eigenvalue of a symmetric linear operator by power
/// iteration from a fixed pseudo-random start.
///
/// Returns `None` when `max_iter` iterations pass without the estimate
/// settling to `10⁻⁸` relatively.
pub fn power_iteration(n: usize, max_iter: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> Option<f64> {
    if n == 0 {
        return Some(0.0);
    }
    let mut rng = rng::stream(0, "power-iteration");
    let mut x = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    x /= x.norm();
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let next = y.norm();
        if next == 0.0 {
            return Some(0.0);
        }
        x = y / next;
        if (next - estimate).abs() <= 1e-8 * next {
            return Some(next);
        }
        estimate = next;
    }
    None
}

/// Spectral norm of a symmetric matrix by power iteration.
///
/// Runs at most 50 iterations; if the estimate has not settled by then, the
/// Frobenius norm (an upper bound) is returned instead.
pub fn spectral_norm(q: &DMatrix<f64>) -> f64 {
    if q.nrows() == 0 || q.amax() == 0.0 {
        return 0.0;
    }
    power_iteration(q.nrows(), 50, |x| q * x).unwrap_or_else(|| q.norm())
}

/// Quadratic problem with `L = ‖Q‖₂`.
pub fn make_quadratic(q_matrix: DMatrix<f64>, c_vector: DVector<f64>, cs: ConstraintSystem) -> Result<Problem> {
    let objective = QuadraticObjective::new(q_matrix, c_vector)?;
    let l = spectral_norm(&objective.q_matrix);
    Problem::new("quadratic", Arc::new(objective), cs, l)
}

/// Change of variables between a box `[lower, upper]` and the lifted
/// nonnegative pairs `(x_i − lower_i, upper_i − x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLift {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxLift {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter("box requires finite lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// Dimension of the original box.
    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.upper - &self.lower
    }

    /// Box point → lifted point `(x₁−l₁, u₁−x₁, x₂−l₂, u₂−x₂, …)`.
    pub fn lift(&self, z: &DVector<f64>) -> DVector<f64> {
        let d = self.dimension();
        let mut out = DVector::zeros(2 * d);
        for i in 0..d {
            out[2 * i] = z[i] - self.lower[i];
            out[2 * i + 1] = self.upper[i] - z[i];
        }
        out
    }

    /// Lifted point → box point.
    pub fn unlift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dimension(), |i, _| x[2 * i] + self.lower[i])
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    /// `x_i + s_i = upper_i − lower_i` for every original coordinate.
    pub fn constraints(&self) -> ConstraintSystem {
        let d = self.dimension();
        let blocks = (0..d).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let widths = self.widths();
        ConstraintSystem::block_simplex(2 * d, blocks, widths.iter().copied().collect())
            .expect("box lift blocks are disjoint")
    }

    /// Uniform draw from the open box.
    pub fn sample_interior<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dimension(), |i, _| {
            let u: f64 = rng.random_range(0.001..0.999);
            self.lower[i] + u * (self.upper[i] - self.lower[i])
        })
    }
}

/// Objective of a box problem composed with [`BoxLift::unlift`].
pub struct LiftedObjective {
    inner: Arc<dyn Objective>,
    lift: BoxLift,
}

impl Objective for LiftedObjective {
    fn dimension(&self) -> usize {
        2 * self.lift.dimension()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(&self.lift.unlift(x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.inner.gradient(&self.lift.unlift(x));
        let mut out = DVector::zeros(self.dimension());
        for i in 0..g.len() {
            out[2 * i] = g[i];
        }
        out
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let h = self.inner.hessian(&self.lift.unlift(x))?;
        let mut out = DMatrix::zeros(self.dimension(), self.dimension());
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                out[(2 * i, 2 * j)] = h[(i, j)];
            }
        }
        Some(out)
    }
}

/// Brings a box-constrained objective into standard form.
///
/// The Lipschitz constant is left at the floor value; callers set it with
/// [`Problem::with_lipschitz`] or use [`grid_lipschitz`].
pub fn lift_box(objective: Arc<dyn Objective>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Problem> {
    let lift = BoxLift::new(lower, upper)?;
    if objective.dimension() != lift.dimension() {
        return Err(Error::DimensionMismatch { expected: lift.dimension(), got: objective.dimension() });
    }
    let cs = lift.constraints();
    let start = lift.lift(&lift.center());
    let lifted = LiftedObjective { inner: objective, lift: lift.clone() };
    let mut problem = Problem::new("lifted", Arc::new(lifted), cs, 0.0)?.with_start(start);
    problem.lift = Some(lift);
    Ok(problem)
}

/// `1.1 ×` the largest Hessian spectral norm on a `grid × grid` lattice over
/// a two-dimensional box, optionally restricted to the sublevel set
/// `{f ≤ level}`.
pub fn grid_lipschitz(objective: &dyn Objective, lift: &BoxLift, grid: usize, level: Option<f64>) -> Result<f64> {
    if lift.dimension() != 2 || grid < 2 {
        return Err(Error::InvalidParameter("grid Lipschitz estimate needs a 2-D box and grid >= 2".into()));
    }
    let mut best = 0.0f64;
    for a in 0..grid {
        for b in 0..grid {
            let t = |k: usize, i: usize| lift.lower[i] + (lift.upper[i] - lift.lower[i]) * k as f64 / (grid - 1) as f64;
            let z = DVector::from_vec(vec![t(a, 0), t(b, 1)]);
            if let Some(level) = level {
                if objective.value(&z) > level {
                    continue;
                }
            }
            let h = objective
                .hessian(&z)
                .ok_or_else(|| Error::InvalidParameter("objective has no Hessian".into()))?;
            let eig = h.symmetric_eigenvalues();
            best = best.max(eig.amax());
        }
    }
    Ok(1.1 * best)
}

/// `f(x₁, x₂) = 100 (x₂ − x₁²)² + (1 − x₁)²`
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl Objective for Rosenbrock {
    fn dimension(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (a, b) = (x[0], x[1]);
        100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = (x[0], x[1]);
        DVector::from_vec(vec![-400.0 * a * (b - a * a) - 2.0 * (1.0 - a), 200.0 * (b - a * a)])
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (a, b) = (x[0], x[1]);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[1200.0 * a * a - 400.0 * b + 2.0, -400.0 * a, -400.0 * a, 200.0],
        ))
    }
}

/// Three-term Beale function, minimum `f(3, ½) = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Beale;

const BEALE_CONSTANTS: [f64; 3] = [1.5, 2.25, 2.625];

impl Objective for Beale {
    fn dimension(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (a, b) = (x[0], x[1]);
        BEALE_CONSTANTS
            .iter()
            .enumerate()
            .map(|(k, c)| (c - a + a * b.powi(k as i32 + 1)).powi(2))
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (a, b) = (x[0], x[1]);
        let mut g = DVector::zeros(2);
        for (k, c) in BEALE_CONSTANTS.iter().enumerate() {
            let p = k as i32 + 1;
            let t = c - a + a * b.powi(p);
            g[0] += 2.0 * t * (b.powi(p) - 1.0);
            g[1] += 2.0 * t * a * f64::from(p) * b.powi(p - 1);
        }
        g
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (a, b) = (x[0], x[1]);
        let mut h = DMatrix::zeros(2, 2);
        for (k, c) in BEALE_CONSTANTS.iter().enumerate() {
            let p = k as i32 + 1;
            let pf = f64::from(p);
            let t = c - a + a * b.powi(p);
            let ta = b.powi(p) - 1.0;
            let tb = a * pf * b.powi(p - 1);
            let tab = pf * b.powi(p - 1);
            let tbb = if p >= 2 { a * pf * (pf - 1.0) * b.powi(p - 2) } else { 0.0 };
            h[(0, 0)] += 2.0 * ta * ta;
            h[(0, 1)] += 2.0 * (ta * tb + t * tab);
            h[(1, 1)] += 2.0 * (tb * tb + t * tbb);
        }
        h[(1, 0)] = h[(0, 1)];
        Some(h)
    }
}

fn make_box_benchmark(
    name: &str,
    objective: Arc<dyn Objective>,
    half_width: f64,
    optimum: [f64; 2],
    start: Option<DVector<f64>>,
) -> Result<Problem> {
    let lower = DVector::from_element(2, -half_width);
    let upper = DVector::from_element(2, half_width);
    let mut problem = lift_box(objective.clone(), lower, upper)?;
    let lift = problem.lift.clone().expect("lifted");
    let z0 = start.unwrap_or_else(|| lift.center());
    let level = objective.value(&z0);
    let l = grid_lipschitz(objective.as_ref(), &lift, 100, Some(level))?;
    problem.name = name.to_string();
    problem.lipschitz_l = l;
    problem.start = Some(lift.lift(&z0));
    let x_star = lift.lift(&DVector::from_vec(optimum.to_vec()));
    Ok(problem.with_known_optimum(KnownOptimum { x: Some(x_star), f: 0.0 }))
}

/// Rosenbrock on `[−3, 3]²`, lifted, started at the box center.
pub fn make_rosenbrock_box() -> Result<Problem> {
    make_box_benchmark("rosenbrock", Arc::new(Rosenbrock), 3.0, [1.0, 1.0], None)
}

/// Beale on `[−4, 4]²`, lifted, started at the box center.
pub fn make_beale_box() -> Result<Problem> {
    make_box_benchmark("beale", Arc::new(Beale), 4.0, [3.0, 0.5], None)
}

/// Rosenbrock or Beale started from a point given in box coordinates.
pub fn make_box_benchmark_from(name: &str, start: DVector<f64>) -> Result<Problem> {
    match name {
        "rosenbrock" => make_box_benchmark(name, Arc::new(Rosenbrock), 3.0, [1.0, 1.0], Some(start)),
        "beale" => make_box_benchmark(name, Arc::new(Beale), 4.0, [3.0, 0.5], Some(start)),
        other => Err(Error::InvalidParameter(format!("unknown box benchmark {other}"))),
    }
}

/// Random QP with exactly `negative_eigs` negative Hessian eigenvalues over
/// a bounded polytope `{x ≥ 0, A x = b}`.
///
/// `A` has entries in `[0.1, 1]`, so every row bounds every coordinate,
/// and `b = A x₀` for a random `x₀ ∈ [0.5, 1.5]ⁿ`, which is returned as the
/// strictly feasible start.
pub fn random_nonconvex_qp(n: usize, m: usize, negative_eigs: usize, seed: u64) -> Result<(Problem, DVector<f64>)> {
    if negative_eigs == 0 || negative_eigs > n {
        return Err(Error::InvalidParameter(format!(
            "negative_eigs must lie in 1..={n}, got {negative_eigs} (use make_quadratic for convex problems)"
        )));
    }
    if m >= n {
        return Err(Error::InvalidParameter(format!("need m < n, got m={m}, n={n}")));
    }
    let mut rng = rng::stream(seed, "nonconvex-qp/spectrum");
    let gauss = DMatrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let v = gauss.qr().q();
    let eig = DVector::from_fn(n, |i, _| {
        let mag: f64 = rng.random_range(0.1..1.0);
        if i < negative_eigs {
            -mag
        } else {
            mag
        }
    });
    let q = v.transpose() * DMatrix::from_diagonal(&eig) * &v;
    let q = (&q + q.transpose()) * 0.5;

    let mut rng = rng::stream(seed, "nonconvex-qp/linear");
    let c = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });

    let mut rng = rng::stream(seed, "nonconvex-qp/constraints");
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.1..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    let b = &a * &x0;
    let cs = ConstraintSystem::new(a, b)?;
    let mut problem = make_quadratic(q, c, cs)?.with_start(x0.clone());
    problem.name = format!("nonconvex-qp-{seed}");
    Ok((problem, x0))
}

// ---------------------------------------------------------------------------
// Problem files

/// Objective section of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Quadratic {
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    Rosenbrock,
    Beale,
    /// Generated by [`random_nonconvex_qp`].
    CustomQp {
        n: usize,
        m: usize,
        negative_eigs: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` triplets; duplicates are summed.
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<SparseMatrix>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl ConstraintsSpec {
    pub fn to_system(&self, n: usize) -> Result<ConstraintSystem> {
        let a = match (&self.dense, &self.sparse) {
            (Some(_), Some(_)) => {
                return Err(Error::Format("constraints must be either dense or sparse, not both".into()));
            }
            (Some(rows), None) => {
                let m = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Format(format!("every constraint row must have {n} entries")));
                }
                DMatrix::from_fn(m, n, |i, j| rows[i][j])
            }
            (None, Some(sp)) => {
                if sp.cols != n {
                    return Err(Error::DimensionMismatch { expected: n, got: sp.cols });
                }
                let mut a = DMatrix::zeros(sp.rows, sp.cols);
                for &(i, j, v) in &sp.entries {
                    if i >= sp.rows || j >= sp.cols {
                        return Err(Error::Format(format!("sparse entry ({i}, {j}) out of range")));
                    }
                    a[(i, j)] += v;
                }
                a
            }
            (None, None) => DMatrix::zeros(0, n),
        };
        ConstraintSystem::new(a, DVector::from_vec(self.b.clone()))
    }

    pub fn from_system(cs: &ConstraintSystem) -> Self {
        let a = cs.a();
        let dense = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
        Self { dense: Some(dense), sparse: None, b: cs.b().iter().copied().collect() }
    }
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintsSpec>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds the problem.
    ///
    /// For Rosenbrock and Beale the constraints are implied by the box and
    /// `start` is given in box coordinates.
    pub fn build(&self) -> Result<Problem> {
        let mut problem = match &self.objective {
            ObjectiveSpec::Quadratic { q, c } => {
                let n = c.len();
                if q.len() != n || q.iter().any(|r| r.len() != n) {
                    return Err(Error::Format(format!("Q must be {n}x{n}")));
                }
                let qm = DMatrix::from_fn(n, n, |i, j| q[i][j]);
                let cs = match &self.constraints {
                    Some(spec) => spec.to_system(n)?,
                    None => ConstraintSystem::unconstrained(n),
                };
                make_quadratic(qm, DVector::from_vec(c.clone()), cs)?
            }
            ObjectiveSpec::Rosenbrock | ObjectiveSpec::Beale => {
                let name = if self.objective == ObjectiveSpec::Rosenbrock { "rosenbrock" } else { "beale" };
                if self.constraints.is_some() {
                    return Err(Error::Format(format!("{name} takes its constraints from the box")));
                }
                let built = match &self.start {
                    Some(z) => make_box_benchmark_from(name, DVector::from_vec(z.clone()))?,
                    None if name == "rosenbrock" => make_rosenbrock_box()?,
                    None => make_beale_box()?,
                };
                return Ok(match self.lipschitz {
                    Some(l) => built.with_lipschitz(l),
                    None => built,
                });
            }
            ObjectiveSpec::CustomQp { n, m, negative_eigs, seed } => {
                if self.constraints.is_some() {
                    return Err(Error::Format("custom_qp generates its own constraints".into()));
                }
                random_nonconvex_qp(*n, *m, *negative_eigs, *seed)?.0
            }
        };
        if let Some(l) = self.lipschitz {
            problem = problem.with_lipschitz(l);
        }
        if let Some(start) = &self.start {
            problem = problem.with_start(DVector::from_vec(start.clone()));
        }
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn fd_gradient(obj: &dyn Objective, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| {
            let h = 1e-6 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (obj.value(&xp) - obj.value(&xm)) / (2.0 * h)
        })
    }

    fn assert_gradient_matches(obj: &dyn Objective, x: &DVector<f64>) {
        let g = obj.gradient(x);
        let fd = fd_gradient(obj, x);
        let scale = 1.0 + g.amax();
        assert!((&g - &fd).amax() <= 1e-5 * scale, "analytic {g} vs fd {fd}");
    }

    #[test]
    fn quadratic_examples() {
        let cs = ConstraintSystem::unconstrained(3);
        let p = make_quadratic(DMatrix::zeros(3, 3), DVector::from_vec(vec![1.0, -2.0, 0.5]), cs).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.7, 2.0]);
        assert_eq!(p.gradient(&x), DVector::from_vec(vec![1.0, -2.0, 0.5]));

        let p = make_quadratic(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
            DVector::zeros(2),
            ConstraintSystem::unconstrained(2),
        )
        .unwrap();
        assert_relative_eq!(p.lipschitz_l(), 1.0, epsilon = 1e-12);

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(make_quadratic(asym, DVector::zeros(2), ConstraintSystem::unconstrained(2)).is_err());
    }

    #[test]
    fn identity_qp_on_simplex_has_uniform_optimum() {
        // KKT: x_i − y = 0 on the support, Σx = 1 → x = 1/n, f = n·(1/n²)/2
        let n = 5;
        let p = make_quadratic(DMatrix::identity(n, n), DVector::zeros(n), ConstraintSystem::simplex(n)).unwrap();
        let x = DVector::from_element(n, 1.0 / n as f64);
        assert_relative_eq!(p.value(&x), 1.0 / (2.0 * n as f64), epsilon = 1e-15);
        let g = p.gradient(&x);
        assert!(g.iter().all(|&gi| (gi - g[0]).abs() < 1e-15));
    }

    #[test]
    fn spectral_norm_matches_eigendecomposition() {
        let mut rng = rng::stream(11, "test");
        for n in [1, 3, 8, 20] {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = (&m + m.transpose()) * 0.5;
            let exact = s.symmetric_eigenvalues().amax();
            let est = spectral_norm(&s);
            assert!(est >= exact * (1.0 - 1e-6), "n={n}: {est} < {exact}");
        }
    }

    #[test]
    fn rosenbrock_examples() {
        let f = Rosenbrock;
        assert_eq!(f.value(&DVector::from_vec(vec![1.0, 1.0])), 0.0);
        assert_eq!(f.value(&DVector::from_vec(vec![0.0, 0.0])), 1.0);
        assert_eq!(f.gradient(&DVector::from_vec(vec![1.0, 1.0])), DVector::zeros(2));
    }

    #[test]
    fn beale_examples() {
        let f = Beale;
        assert_eq!(f.value(&DVector::from_vec(vec![3.0, 0.5])), 0.0);
        assert_eq!(f.value(&DVector::from_vec(vec![0.0, 0.0])), 14.203125);
        assert_eq!(f.gradient(&DVector::from_vec(vec![3.0, 0.5])), DVector::zeros(2));
    }

    #[test]
    fn hessians_match_finite_differences() {
        let mut rng = rng::stream(3, "test");
        let objs: [&dyn Objective; 2] = [&Rosenbrock, &Beale];
        for obj in objs {
            for _ in 0..20 {
                let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
                let h = obj.hessian(&x).unwrap();
                for j in 0..2 {
                    let step = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += step;
                    xm[j] -= step;
                    let col = (obj.gradient(&xp) - obj.gradient(&xm)) / (2.0 * step);
                    for i in 0..2 {
                        assert!((col[i] - h[(i, j)]).abs() <= 1e-5 * (1.0 + h.amax()));
                    }
                }
            }
        }
    }

    #[test]
    fn lifted_problem_structure() {
        let p = make_rosenbrock_box().unwrap();
        let cs = p.constraints();
        assert_eq!(cs.a().shape(), (2, 4));
        assert_eq!(cs.a().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(cs.a().row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert!(cs.is_block_simplex());
        let start = p.start().unwrap();
        assert_eq!(start.as_slice(), &[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(p.value(start), Rosenbrock.value(&DVector::zeros(2)));
        assert!(cs.residual_inf(start) == 0.0);
        assert_eq!(p.coordinate_upper_bounds(), vec![6.0; 4]);
    }

    #[test]
    fn lifted_gradients_match_finite_differences() {
        let mut rng = rng::stream(5, "test");
        for p in [make_rosenbrock_box().unwrap(), make_beale_box().unwrap()] {
            let lift = p.lift().unwrap().clone();
            for _ in 0..20 {
                let z = lift.sample_interior(&mut rng);
                let x = lift.lift(&z);
                assert_gradient_matches(p.objective().as_ref(), &x);
                let g = p.gradient(&x);
                assert_eq!(g[1], 0.0);
                assert_eq!(g[3], 0.0);
            }
        }
    }

    #[test]
    fn box_lift_roundtrip() {
        let lift = BoxLift::new(DVector::from_vec(vec![-3.0, 0.5, -1e3]), DVector::from_vec(vec![3.0, 0.75, 2.0])).unwrap();
        let mut rng = rng::stream(9, "test");
        for _ in 0..1000 {
            let z = lift.sample_interior(&mut rng);
            let x = lift.lift(&z);
            assert!(x.iter().all(|&v| v > 0.0));
            assert_relative_eq!(lift.unlift(&x), z, epsilon = 1e-12);
        }
        assert!(BoxLift::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn lipschitz_estimates_are_positive_and_bounded_by_box() {
        let r = make_rosenbrock_box().unwrap();
        let lift = r.lift().unwrap().clone();
        let full = grid_lipschitz(&Rosenbrock, &lift, 100, None).unwrap();
        assert!(r.lipschitz_l() > 1000.0 && r.lipschitz_l() < full);
        let b = make_beale_box().unwrap();
        assert!(b.lipschitz_l() > 49.0);
    }

    #[test]
    fn nonconvex_qp_generator() {
        assert!(random_nonconvex_qp(10, 3, 0, 1).is_err());
        assert!(random_nonconvex_qp(10, 10, 2, 1).is_err());
        let (p, x0) = random_nonconvex_qp(20, 5, 5, 42).unwrap();
        let q = p.objective().hessian(&x0).unwrap();
        let negatives = q.symmetric_eigenvalues().iter().filter(|&&e| e < 0.0).count();
        assert_eq!(negatives, 5);
        assert!(x0.iter().all(|&v| v > 0.0));
        assert!(p.constraints().residual_inf(&x0) <= 1e-12);
        assert!(p.coordinate_upper_bounds().iter().all(|u| u.is_finite()));

        let (p2, x2) = random_nonconvex_qp(20, 5, 5, 42).unwrap();
        assert_eq!(x0, x2);
        assert_eq!(p.constraints(), p2.constraints());
        assert_eq!(q, p2.objective().hessian(&x2).unwrap());
        let (p3, _) = random_nonconvex_qp(20, 5, 5, 43).unwrap();
        assert_ne!(p.constraints(), p3.constraints());
    }

    #[test]
    fn qp_gradient_oracle() {
        let (p, x0) = random_nonconvex_qp(12, 3, 4, 7).unwrap();
        let mut rng = rng::stream(1, "test");
        for _ in 0..20 {
            let x = x0.map(|v| v * rng.random_range(0.5..1.5));
            assert_gradient_matches(p.objective().as_ref(), &x);
        }
    }

    #[test]
    fn problem_file_parsing() {
        let text = r#"{
            "objective": {"type": "quadratic", "q": [[2, 0], [0, 1]], "c": [0, -1]},
            "constraints": {"sparse": {"rows": 1, "cols": 2, "entries": [[0, 0, 1.0], [0, 1, 1.0]]}, "b": [1]},
            "start": [0.5, 0.5]
        }"#;
        let pf: ProblemFile = serde_json::from_str(text).unwrap();
        let p = pf.build().unwrap();
        assert_eq!(p.dimension(), 2);
        assert!(p.constraints().is_block_simplex());
        assert_relative_eq!(p.lipschitz_l(), 2.0, epsilon = 1e-8);

        let pf: ProblemFile = serde_json::from_str(r#"{"objective": {"type": "rosenbrock"}, "L": 5000}"#).unwrap();
        let p = pf.build().unwrap();
        assert_eq!(p.lipschitz_l(), 5000.0);
        assert_eq!(p.dimension(), 4);

        let pf: ProblemFile =
            serde_json::from_str(r#"{"objective": {"type": "custom_qp", "n": 8, "m": 2, "negative_eigs": 3, "seed": 1}}"#)
                .unwrap();
        assert_eq!(pf.build().unwrap().dimension(), 8);

        let bad = r#"{"objective": {"type": "quadratic", "q": [[1]], "c": [0]},
                      "constraints": {"dense": [[1]], "sparse": {"rows":1,"cols":1,"entries":[]}, "b": [1]}}"#;
        assert!(serde_json::from_str::<ProblemFile>(bad).unwrap().build().is_err());
    }
}
