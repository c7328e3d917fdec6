//! Hessian barrier algorithm and the entropic mirror-descent baseline.
//!
//! One HBA step at `x`:
//! 1. `v = −H⁻¹ r` from [`search_direction`],
//! 2. bootstrap `ᾱ = min(τ·α₀(x), 2β/L)`,
//! 3. Armijo backtracking `α = δ^ℓ ᾱ` until `f(x + αv) − f(x) ≤ −μ α ‖v‖²ₓ`.
//!
//! The trace holds one record per visited iterate. Record `k` stores `f(xᵏ)`
//! together with the step taken *from* `xᵏ`; the last record has `alpha = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dual_feasibility_violation, kkt_residual, search_direction, ConstraintSystem, GeometryResult};
use crate::kernels::{metric_at, min_beta, DiagonalMetric, Kernel, KernelSpec};
use crate::problems::{Objective, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoParams {
    pub mu: f64,
    pub delta: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { mu: 1e-4, delta: 0.5, max_backtracks: 60 }
    }
}

impl ArmijoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidParameter(format!("mu must lie in (0,1), got {}", self.mu)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if self.max_backtracks == 0 {
            return Err(Error::InvalidParameter("max_backtracks must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub armijo: ArmijoParams,
    /// Overrides the problem's Lipschitz constant when set.
    pub lipschitz_l: Option<f64>,
    pub boundary_safety_tau: f64,
    pub tol_complementarity: f64,
    pub tol_direction: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            armijo: ArmijoParams::default(),
            lipschitz_l: None,
            boundary_safety_tau: 0.99,
            tol_complementarity: 1e-8,
            tol_direction: 0.0,
            max_iterations: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.armijo.validate()?;
        if !(self.boundary_safety_tau > 0.0 && self.boundary_safety_tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must lie in (0,1), got {}", self.boundary_safety_tau)));
        }
        if let Some(l) = self.lipschitz_l {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        if !(self.tol_complementarity >= 0.0) || !(self.tol_direction >= 0.0) {
            return Err(Error::InvalidParameter("tolerances must be nonnegative".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_lipschitz(&self, problem: &Problem) -> f64 {
        self.lipschitz_l.unwrap_or_else(|| problem.lipschitz_l())
    }

    fn stop_rule(&self, comp: f64, dual_violation: f64, v_norm_x: f64) -> Option<StopRule> {
        if comp <= self.tol_complementarity && dual_violation <= self.tol_complementarity.sqrt() {
            Some(StopRule::Complementarity)
        } else if v_norm_x <= self.tol_direction {
            Some(StopRule::Direction)
        } else {
            None
        }
    }

    /// Termination check shared by HBA and mirror descent.
    fn check(&self, k: usize, stationary: bool, comp: f64, dual_violation: f64, v_norm_x: f64) -> Option<(Termination, Option<StopRule>)> {
        if stationary {
            let t = if k == 0 { Termination::StationaryStart } else { Termination::ToleranceMet };
            return Some((t, Some(StopRule::Stationary)));
        }
        if let Some(rule) = self.stop_rule(comp, dual_violation, v_norm_x) {
            return Some((Termination::ToleranceMet, Some(rule)));
        }
        (k >= self.max_iterations).then_some((Termination::MaxIterations, None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub f_value: f64,
    /// Step taken from this iterate; `0` on the final record.
    pub step_alpha: f64,
    pub backtracks: usize,
    pub complementarity_residual: f64,
    pub v_norm_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ToleranceMet,
    MaxIterations,
    StationaryStart,
    NumericalFailure,
}

/// Which test ended a [`Termination::ToleranceMet`] run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    Complementarity,
    Direction,
    /// `v` vanished up to round-off.
    Stationary,
    /// No step could show a decrease above the round-off level of `f`.
    PrecisionFloor,
}

/// Relative size of `α‖v‖²ₓ` (against `1 + |f|`) below which a failed line
/// search is attributed to round-off rather than to the objective.
pub const PRECISION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktDiagnostics {
    pub complementarity: f64,
    pub dual_feasibility_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub final_x: DVector<f64>,
    pub final_f: f64,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    pub stop_rule: Option<StopRule>,
    pub final_kkt: KktDiagnostics,
    /// Error behind a [`Termination::NumericalFailure`].
    pub failure: Option<Error>,
}

impl SolveReport {
    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Everything the solver knows about one accepted step.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub k: usize,
    pub x: &'a DVector<f64>,
    pub f: f64,
    pub gradient: &'a DVector<f64>,
    pub metric: &'a DiagonalMetric,
    pub geometry: &'a GeometryResult,
    pub alpha_zero: f64,
    pub alpha_start: f64,
    pub alpha: f64,
    pub backtracks: usize,
    pub x_new: &'a DVector<f64>,
    pub f_new: f64,
}

/// `min{ xᵢ θ''ᵢ(xᵢ) / rᵢ : rᵢ > 0 }`, `+∞` if no `rᵢ` is positive.
pub fn alpha_zero(x: &DVector<f64>, r: &DVector<f64>, kernels: &[Kernel]) -> f64 {
    x.iter()
        .zip(r.iter())
        .zip(kernels)
        .filter(|((_, &ri), _)| ri > 0.0)
        .map(|((&xi, &ri), k)| xi * k.theta_second(xi) / ri)
        .fold(f64::INFINITY, f64::min)
}

/// `min(τ·α₀, 2β/L)`.
pub fn bootstrap_step(alpha0: f64, tau: f64, kernel_beta: f64, lipschitz_l: f64) -> Result<f64> {
    if !(kernel_beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel beta must be positive over the working range, got {kernel_beta}"
        )));
    }
    if !(alpha0 > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha0 must be positive, got {alpha0}")));
    }
    if !(lipschitz_l > 0.0) {
        return Err(Error::InvalidParameter(format!("Lipschitz constant must be positive, got {lipschitz_l}")));
    }
    Ok((tau * alpha0).min(2.0 * kernel_beta / lipschitz_l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmijoOutcome {
    pub alpha: f64,
    pub x_new: DVector<f64>,
    pub f_new: f64,
    pub backtracks: usize,
}

/// Backtracks from `alpha_start` until sufficient decrease holds.
pub fn armijo_search(
    problem: &Problem,
    x: &DVector<f64>,
    geo: &GeometryResult,
    alpha_start: f64,
    params: &ArmijoParams,
) -> Result<ArmijoOutcome> {
    let f_x = problem.value(x);
    armijo_from(problem.objective().as_ref(), x, f_x, geo, alpha_start, params)
}

fn armijo_from(
    objective: &dyn Objective,
    x: &DVector<f64>,
    f_x: f64,
    geo: &GeometryResult,
    alpha_start: f64,
    params: &ArmijoParams,
) -> Result<ArmijoOutcome> {
    let v = &geo.direction_v;
    let mut alpha = alpha_start;
    for backtracks in 0..=params.max_backtracks {
        let x_new = x + v * alpha;
        if x_new.iter().all(|&t| t > 0.0) {
            let f_new = objective.value(&x_new);
            if f_new.is_finite() && f_new - f_x <= -params.mu * alpha * geo.v_norm_x_sq {
                return Ok(ArmijoOutcome { alpha, x_new, f_new, backtracks });
            }
        }
        alpha *= params.delta;
    }
    Err(Error::ArmijoExhausted(params.max_backtracks))
}

/// One kernel per coordinate, with working ranges from the constraint bounds.
pub fn kernels_for(problem: &Problem, spec: &KernelSpec) -> Result<Vec<Kernel>> {
    spec.build_all(&problem.coordinate_upper_bounds())
}

fn validate_start(problem: &Problem, x0: &DVector<f64>, kernels: &[Kernel]) -> Result<f64> {
    let n = problem.dimension();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if kernels.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: kernels.len() });
    }
    if let Some((i, v)) = x0.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InfeasibleStart(format!("coordinate {i} = {v} is not strictly positive")));
    }
    let cs = problem.constraints();
    let residual = cs.residual_inf(x0);
    if residual > cs.feasibility_tolerance() {
        return Err(Error::InfeasibleStart(format!("‖Ax − b‖∞ = {residual:e}")));
    }
    let f0 = problem.value(x0);
    if !f0.is_finite() {
        return Err(Error::InfeasibleStart(format!("f(x0) = {f0}")));
    }
    Ok(f0)
}

/// `v` vanishes up to round-off when `r` is negligible against `∇f`.
fn is_stationary(grad: &DVector<f64>, geo: &GeometryResult) -> bool {
    geo.reduced_cost_r.amax() <= 1e-12 * (1.0 + grad.amax())
}

pub fn hba_solve(problem: &Problem, x0: &DVector<f64>, kernels: &[Kernel], config: &SolverConfig) -> Result<SolveReport> {
    hba_solve_observed(problem, x0, kernels, config, |_| {})
}

/// [`hba_solve`] with a callback invoked after every accepted step.
///
/// Input errors (bad config, infeasible start) are returned as `Err`;
/// breakdowns during the run end it with [`Termination::NumericalFailure`]
/// and the partial trace.
pub fn hba_solve_observed(
    problem: &Problem,
    x0: &DVector<f64>,
    kernels: &[Kernel],
    config: &SolverConfig,
    mut observer: impl FnMut(&StepEvent<'_>),
) -> Result<SolveReport> {
    config.validate()?;
    let mut f = validate_start(problem, x0, kernels)?;
    let beta = min_beta(kernels);
    let l = config.effective_lipschitz(problem);
    bootstrap_step(f64::INFINITY, config.boundary_safety_tau, beta, l)?;

    let cs = problem.constraints();
    let objective = problem.objective().as_ref();
    let mut x = x0.clone();
    let mut trace = Vec::new();
    let mut kkt = KktDiagnostics { complementarity: f64::NAN, dual_feasibility_violation: f64::NAN };

    let finish = |x: DVector<f64>, f, trace, termination, stop_rule, kkt, failure| SolveReport {
        final_x: x,
        final_f: f,
        trace,
        termination,
        stop_rule,
        final_kkt: kkt,
        failure,
    };

    for k in 0.. {
        let grad = objective.gradient(&x);
        let (metric, geo) = match metric_at(kernels, &x).and_then(|h| search_direction(cs, &h, &grad).map(|g| (h, g))) {
            Ok(mg) => mg,
            Err(e) => return Ok(finish(x, f, trace, Termination::NumericalFailure, None, kkt, Some(e))),
        };
        let comp = kkt_residual(&x, &geo);
        let dual_violation = dual_feasibility_violation(&geo);
        let v_norm_x = geo.v_norm_x_sq.sqrt();
        kkt = KktDiagnostics { complementarity: comp, dual_feasibility_violation: dual_violation };
        let mut record = IterationRecord {
            k,
            f_value: f,
            step_alpha: 0.0,
            backtracks: 0,
            complementarity_residual: comp,
            v_norm_x,
        };

        if let Some((t, rule)) = config.check(k, is_stationary(&grad, &geo), comp, dual_violation, v_norm_x) {
            trace.push(record);
            return Ok(finish(x, f, trace, t, rule, kkt, None));
        }

        let a0 = alpha_zero(&x, &geo.reduced_cost_r, kernels);
        let alpha_start = (config.boundary_safety_tau * a0).min(2.0 * beta / l);
        // Below the guaranteed step floor, an accepted or failed search at
        // round-off scale carries no information about f.
        let at_precision_floor = alpha_start * geo.v_norm_x_sq <= PRECISION_FLOOR * (1.0 + f.abs());
        let floor = step_floor(&config.armijo, beta, l, alpha_start);
        let step = match armijo_from(objective, &x, f, &geo, alpha_start, &config.armijo) {
            Ok(s) if !(at_precision_floor && s.alpha < floor) => s,
            outcome => {
                trace.push(record);
                if at_precision_floor {
                    return Ok(finish(x, f, trace, Termination::ToleranceMet, Some(StopRule::PrecisionFloor), kkt, None));
                }
                let e = outcome.expect_err("accepted steps are handled above");
                return Ok(finish(x, f, trace, Termination::NumericalFailure, None, kkt, Some(e)));
            }
        };
        record.step_alpha = step.alpha;
        record.backtracks = step.backtracks;
        trace.push(record);
        observer(&StepEvent {
            k,
            x: &x,
            f,
            gradient: &grad,
            metric: &metric,
            geometry: &geo,
            alpha_zero: a0,
            alpha_start,
            alpha: step.alpha,
            backtracks: step.backtracks,
            x_new: &step.x_new,
            f_new: step.f_new,
        });
        x = step.x_new;
        f = step.f_new;
    }
    unreachable!("the iteration loop only exits by returning")
}

/// Relative error of `−∇fᵀv = ‖v‖²ₓ`.
///
/// `v` is formed from `r = ∇f − Aᵀy`, which cancels heavily near stationary
/// points, so the error is measured against the size of the terms before
/// cancellation, `Σ |gᵢ| H⁻¹ᵢ (|gᵢ| + (|A|ᵀ|y|)ᵢ)`.
pub fn angle_identity_error(
    cs: &ConstraintSystem,
    grad: &DVector<f64>,
    metric: &DiagonalMetric,
    geo: &GeometryResult,
) -> f64 {
    let h_inv = &metric.h_inv_diag;
    let err = (-grad.dot(&geo.direction_v) - geo.v_norm_x_sq).abs();
    let row_part = if cs.m() == 0 { DVector::zeros(grad.len()) } else { cs.a().abs().transpose() * geo.dual_y.abs() };
    let scale: f64 = (0..grad.len()).map(|i| grad[i].abs() * h_inv[i] * (grad[i].abs() + row_part[i])).sum();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Guaranteed lower bound on the accepted step, `min{2(1−μ)βδ/L, ᾱ}`.
pub fn step_floor(params: &ArmijoParams, beta: f64, lipschitz_l: f64, alpha_start: f64) -> f64 {
    (2.0 * (1.0 - params.mu) * beta * params.delta / lipschitz_l).min(alpha_start)
}

/// Counts violations of the per-step guarantees of HBA.
#[derive(Debug, Clone)]
pub struct InvariantMonitor {
    mu: f64,
    delta: f64,
    tau: f64,
    beta: f64,
    lipschitz_l: f64,
    constraints: ConstraintSystem,
    pub steps: usize,
    pub sufficient_decrease: usize,
    pub feasibility: usize,
    pub angle_identity: usize,
    pub step_floor: usize,
    /// Largest relative angle-identity error seen.
    pub worst_angle_error: f64,
}

impl InvariantMonitor {
    pub fn new(problem: &Problem, kernels: &[Kernel], config: &SolverConfig) -> Self {
        Self {
            mu: config.armijo.mu,
            delta: config.armijo.delta,
            tau: config.boundary_safety_tau,
            beta: min_beta(kernels),
            lipschitz_l: config.effective_lipschitz(problem),
            constraints: problem.constraints().clone(),
            steps: 0,
            sufficient_decrease: 0,
            feasibility: 0,
            angle_identity: 0,
            step_floor: 0,
            worst_angle_error: 0.0,
        }
    }

    pub fn observe(&mut self, ev: &StepEvent<'_>) {
        self.steps += 1;
        let geo = ev.geometry;
        if !(ev.f_new - ev.f <= -self.mu * ev.alpha * geo.v_norm_x_sq) {
            self.sufficient_decrease += 1;
        }
        if ev.x_new.iter().any(|&t| !(t > 0.0))
            || self.constraints.residual_inf(ev.x_new) > self.constraints.feasibility_tolerance()
        {
            self.feasibility += 1;
        }
        let rel = angle_identity_error(&self.constraints, ev.gradient, ev.metric, geo);
        self.worst_angle_error = self.worst_angle_error.max(rel);
        if rel > 1e-8 {
            self.angle_identity += 1;
        }
        let two_beta_l = 2.0 * self.beta / self.lipschitz_l;
        let floor = (two_beta_l * (1.0 - self.mu) * self.delta).min(self.tau * ev.alpha_zero).min(two_beta_l);
        if ev.alpha < floor * (1.0 - 1e-12) {
            self.step_floor += 1;
        }
    }

    pub fn total_violations(&self) -> usize {
        self.sufficient_decrease + self.feasibility + self.angle_identity + self.step_floor
    }

    pub fn counts(&self) -> InvariantCounts {
        InvariantCounts {
            steps: self.steps,
            sufficient_decrease: self.sufficient_decrease,
            feasibility: self.feasibility,
            angle_identity: self.angle_identity,
            step_floor: self.step_floor,
            worst_angle_error: self.worst_angle_error,
        }
    }
}

/// Serializable snapshot of an [`InvariantMonitor`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantCounts {
    pub steps: usize,
    pub sufficient_decrease: usize,
    pub feasibility: usize,
    pub angle_identity: usize,
    pub step_floor: usize,
    pub worst_angle_error: f64,
}

impl InvariantCounts {
    pub fn total_violations(&self) -> usize {
        self.sufficient_decrease + self.feasibility + self.angle_identity + self.step_floor
    }
}

/// Step sizes of mirror descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `α / √(k+1)`
    InverseSqrt { alpha: f64 },
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::InverseSqrt { alpha } => alpha / ((k + 1) as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } | StepSchedule::InverseSqrt { alpha } => alpha,
        }
    }
}

/// The HBA bootstrap step at `x0` with the entropy kernel, used as the
/// default mirror-descent step.
pub fn default_md_step(problem: &Problem, x0: &DVector<f64>, config: &SolverConfig) -> Result<f64> {
    let kernels = kernels_for(problem, &KernelSpec::Gibbs { beta: 0.0 })?;
    validate_start(problem, x0, &kernels)?;
    let grad = problem.gradient(x0);
    let geo = search_direction(problem.constraints(), &metric_at(&kernels, x0)?, &grad)?;
    let a0 = alpha_zero(x0, &geo.reduced_cost_r, &kernels);
    bootstrap_step(a0, config.boundary_safety_tau, min_beta(&kernels), config.effective_lipschitz(problem))
}

/// Blocks of a block-simplex system that covers every coordinate.
fn simplex_blocks(cs: &ConstraintSystem) -> Result<&[Vec<usize>]> {
    match cs.blocks() {
        Some(blocks) if blocks.iter().map(Vec::len).sum::<usize>() == cs.n() => Ok(blocks),
        _ => Err(Error::UnsupportedGeometry),
    }
}

/// `xᵢ⁺ ∝ xᵢ·exp(−α ∂ᵢf(x))` within each block, rescaled to the block total.
///
/// Weights that underflow are floored at the smallest positive normal.
pub fn mirror_step(cs: &ConstraintSystem, x: &DVector<f64>, grad: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let blocks = simplex_blocks(cs)?;
    let mut out = x.clone();
    for (blk, &total) in blocks.iter().zip(cs.b().iter()) {
        let g_min = blk.iter().map(|&i| grad[i]).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        for &i in blk {
            out[i] = x[i] * (-alpha * (grad[i] - g_min)).exp();
            sum += out[i];
        }
        for &i in blk {
            // The exact update never reaches zero; keep underflowed weights representable.
            out[i] = (out[i] * (total / sum)).max(f64::MIN_POSITIVE);
        }
    }
    Ok(out)
}

/// Entropic mirror descent on a block-simplex region.
///
/// The trace carries the same diagnostics as HBA (measured in the entropy
/// metric); `backtracks` is always zero and `f` need not be monotone.
pub fn mirror_descent_solve(
    problem: &Problem,
    x0: &DVector<f64>,
    schedule: StepSchedule,
    config: &SolverConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let cs = problem.constraints();
    simplex_blocks(cs)?;
    if !(schedule.base() > 0.0 && schedule.base().is_finite()) {
        return Err(Error::InvalidParameter(format!("mirror-descent step must be positive, got {}", schedule.base())));
    }
    let kernels = kernels_for(problem, &KernelSpec::Gibbs { beta: 0.0 })?;
    let mut f = validate_start(problem, x0, &kernels)?;
    let mut x = x0.clone();
    let mut trace = Vec::new();
    let mut kkt = KktDiagnostics { complementarity: f64::NAN, dual_feasibility_violation: f64::NAN };
    for k in 0.. {
        let grad = problem.gradient(&x);
        let geo = match metric_at(&kernels, &x).and_then(|h| search_direction(cs, &h, &grad)) {
            Ok(g) => g,
            Err(e) => {
                return Ok(SolveReport {
                    final_x: x,
                    final_f: f,
                    trace,
                    termination: Termination::NumericalFailure,
                    stop_rule: None,
                    final_kkt: kkt,
                    failure: Some(e),
                })
            }
        };
        let comp = kkt_residual(&x, &geo);
        let dual_violation = dual_feasibility_violation(&geo);
        let v_norm_x = geo.v_norm_x_sq.sqrt();
        kkt = KktDiagnostics { complementarity: comp, dual_feasibility_violation: dual_violation };
        let mut record =
            IterationRecord { k, f_value: f, step_alpha: 0.0, backtracks: 0, complementarity_residual: comp, v_norm_x };
        if let Some((t, rule)) = config.check(k, is_stationary(&grad, &geo), comp, dual_violation, v_norm_x) {
            trace.push(record);
            return Ok(SolveReport {
                final_x: x,
                final_f: f,
                trace,
                termination: t,
                stop_rule: rule,
                final_kkt: kkt,
                failure: None,
            });
        }
        let alpha = schedule.step(k);
        let x_new = mirror_step(cs, &x, &grad, alpha)?;
        let f_new = problem.value(&x_new);
        if x_new.iter().any(|&t| !(t > 0.0)) || !f_new.is_finite() {
            trace.push(record);
            let bad = x_new.iter().position(|&t| !(t > 0.0)).unwrap_or(0);
            return Ok(SolveReport {
                final_x: x,
                final_f: f,
                trace,
                termination: Termination::NumericalFailure,
                stop_rule: None,
                final_kkt: kkt,
                failure: Some(Error::NotInterior { index: bad, value: x_new[bad] }),
            });
        }
        record.step_alpha = alpha;
        trace.push(record);
        x = x_new;
        f = f_new;
    }
    unreachable!("the iteration loop only exits by returning")
}

/// Classical dynamics recovered by particular kernel/constraint choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpecialCase {
    /// `m = 0`, `θ'' = t^(−p)`: `xᵢ⁺ = xᵢ − α xᵢᵖ ∂ᵢf`.
    LotkaVolterra,
    /// Unit simplex with the entropy kernel: `xᵢ⁺ = xᵢ − α xᵢ(∂ᵢf − Σⱼ xⱼ∂ⱼf)`.
    Replicator,
    /// Linear `f = cᵀx` with `θ'' = t^(−p)`: weighted least-squares affine scaling.
    AffineScaling,
    /// `m = 0`, metric `∇²f + βI`: `x⁺ = x − α(∇²f + βI)⁻¹∇f`.
    RegularizedNewton { beta: f64 },
}

/// One point of a special-case comparison.
#[derive(Clone)]
pub struct SpecialCaseInstance {
    pub x: DVector<f64>,
    pub constraints: ConstraintSystem,
    pub kernels: Vec<Kernel>,
    pub objective: Arc<dyn Objective>,
    pub alpha: f64,
}

fn pure_power_kernels(kernels: &[Kernel]) -> Option<f64> {
    let q = kernels.first()?.steepness_order();
    kernels
        .iter()
        .all(|k| k.regularization() == 0.0 && k.steepness_order() == q && !matches!(k.spec(), KernelSpec::Mixture { .. }))
        .then_some(q)
}

/// Runs one HBA update through the generic pipeline and through the
/// closed-form formula of `case`; returns the largest componentwise gap.
pub fn check_special_case_equivalence(case: SpecialCase, inst: &SpecialCaseInstance) -> Result<f64> {
    let n = inst.x.len();
    let cs = &inst.constraints;
    if cs.n() != n || inst.objective.dimension() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cs.n() });
    }
    let grad = inst.objective.gradient(&inst.x);
    let alpha = inst.alpha;
    let mismatch = |why: &str| Err(Error::StructuralMismatch(why.into()));

    let (metric, closed) = match case {
        SpecialCase::LotkaVolterra => {
            if cs.m() != 0 {
                return mismatch("Lotka-Volterra requires m = 0");
            }
            let Some(p) = pure_power_kernels(&inst.kernels) else {
                return mismatch("Lotka-Volterra requires θ''(t) = t^(-p)");
            };
            let closed = DVector::from_fn(n, |i, _| inst.x[i] - alpha * inst.x[i].powf(p) * grad[i]);
            (metric_at(&inst.kernels, &inst.x)?, closed)
        }
        SpecialCase::Replicator => {
            let unit_simplex = cs.blocks().is_some_and(|b| b.len() == 1 && b[0].len() == n) && cs.b()[0] == 1.0;
            if !unit_simplex {
                return mismatch("replicator dynamics require the unit simplex");
            }
            if pure_power_kernels(&inst.kernels) != Some(1.0) {
                return mismatch("replicator dynamics require the entropy kernel");
            }
            if cs.residual_inf(&inst.x) > cs.feasibility_tolerance() {
                return mismatch("point is not on the simplex");
            }
            let mean = inst.x.dot(&grad);
            let closed = DVector::from_fn(n, |i, _| inst.x[i] - alpha * inst.x[i] * (grad[i] - mean));
            (metric_at(&inst.kernels, &inst.x)?, closed)
        }
        SpecialCase::AffineScaling => {
            let linear = inst.objective.hessian(&inst.x).is_some_and(|h| h.amax() == 0.0);
            if !linear {
                return mismatch("affine scaling requires a linear objective");
            }
            let Some(p) = pure_power_kernels(&inst.kernels) else {
                return mismatch("affine scaling requires θ''(t) = t^(-p)");
            };
            let d = inst.x.map(|t| t.powf(p));
            let closed = if cs.m() == 0 {
                &inst.x - d.component_mul(&grad) * alpha
            } else {
                let a = cs.a();
                let mut ad = a.clone();
                for (i, mut col) in ad.column_iter_mut().enumerate() {
                    col *= d[i];
                }
                let y = (&ad * a.transpose())
                    .lu()
                    .solve(&(&ad * &grad))
                    .ok_or(Error::SingularMetricSystem)?;
                let r = &grad - a.transpose() * y;
                &inst.x - d.component_mul(&r) * alpha
            };
            (metric_at(&inst.kernels, &inst.x)?, closed)
        }
        SpecialCase::RegularizedNewton { beta } => {
            if cs.m() != 0 {
                return mismatch("regularized Newton requires m = 0");
            }
            let Some(hess) = inst.objective.hessian(&inst.x) else {
                return mismatch("regularized Newton requires an explicit Hessian");
            };
            // Only separable f gives a diagonal (kernel-representable) metric.
            if (0..n).any(|i| (0..n).any(|j| i != j && hess[(i, j)] != 0.0)) {
                return mismatch("the Hessian is not diagonal");
            }
            if !(beta > 0.0) || hess.diagonal().iter().any(|&h| h < 0.0) {
                return mismatch("regularized Newton requires convex f and beta > 0");
            }
            let system = hess + DMatrix::identity(n, n) * beta;
            let step = system.clone().lu().solve(&grad).ok_or(Error::SingularMetricSystem)?;
            let closed = &inst.x - step * alpha;
            (DiagonalMetric::from_diag(system.diagonal()), closed)
        }
    };
    let geo = search_direction(cs, &metric, &grad)?;
    let generic = &inst.x + &geo.direction_v * alpha;
    Ok((generic - closed).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, make_rosenbrock_box, QuadraticObjective};
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn gibbs(n: usize, upper: f64) -> Vec<Kernel> {
        KernelSpec::Gibbs { beta: 0.0 }.build_all(&vec![upper; n]).unwrap()
    }

    #[test]
    fn alpha_zero_examples() {
        let k = gibbs(2, 1.0);
        assert_eq!(alpha_zero(&dv(&[0.5, 0.5]), &dv(&[-1.0, 0.0]), &k), f64::INFINITY);
        assert_relative_eq!(alpha_zero(&dv(&[0.5, 0.5]), &dv(&[2.0, -1.0]), &k), 0.5);
        let burg = vec![Kernel::burg(0.0).unwrap(); 2];
        assert_relative_eq!(alpha_zero(&dv(&[1.0, 1.0]), &dv(&[1.0, 4.0]), &burg), 0.25);
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_step(f64::INFINITY, 0.99, 1.0, 4.0).unwrap(), 0.5);
        assert_relative_eq!(bootstrap_step(0.1, 0.99, 1.0, 0.1).unwrap(), 0.099);
        assert_eq!(bootstrap_step(f64::INFINITY, 0.99, 1.0, 2.0).unwrap(), 1.0);
        assert!(bootstrap_step(1.0, 0.99, 0.0, 1.0).is_err());
        assert!(bootstrap_step(1.0, 0.99, -1.0, 1.0).is_err());
    }

    fn half_norm_sq(n: usize) -> Problem {
        make_quadratic(DMatrix::identity(n, n), DVector::zeros(n), ConstraintSystem::unconstrained(n)).unwrap()
    }

    #[test]
    fn armijo_accepts_bootstrap_on_quadratic() {
        let p = half_norm_sq(2);
        let kernels = vec![Kernel::gibbs(1.0).unwrap(); 2];
        let x = dv(&[1.0, 1.0]);
        let h = metric_at(&kernels, &x).unwrap();
        let geo = search_direction(p.constraints(), &h, &p.gradient(&x)).unwrap();
        let a0 = alpha_zero(&x, &geo.reduced_cost_r, &kernels);
        let start = bootstrap_step(a0, 0.99, 1.0, 1.0).unwrap();
        let out = armijo_search(&p, &x, &geo, start, &ArmijoParams::default()).unwrap();
        assert_eq!(out.backtracks, 0);
        // overstated L: still no backtracking
        let small = bootstrap_step(a0, 0.99, 1.0, 100.0).unwrap();
        let out = armijo_search(&p, &x, &geo, small, &ArmijoParams::default()).unwrap();
        assert_eq!(out.backtracks, 0);
        assert_eq!(out.alpha, small);
    }

    #[test]
    fn armijo_lower_bound_with_understated_l() {
        let q = DMatrix::from_diagonal(&dv(&[50.0, 1.0]));
        let p = make_quadratic(q, dv(&[-100.0, -1.0]), ConstraintSystem::unconstrained(2)).unwrap();
        let kernels = vec![Kernel::gibbs(1.0).unwrap(); 2];
        let params = ArmijoParams::default();
        let x = dv(&[1.0, 2.0]);
        let geo = search_direction(p.constraints(), &metric_at(&kernels, &x).unwrap(), &p.gradient(&x)).unwrap();
        let a0 = alpha_zero(&x, &geo.reduced_cost_r, &kernels);
        // L = 1 while the true constant is 50: backtracking must kick in.
        let start = bootstrap_step(a0, 0.99, 1.0, 1.0).unwrap();
        let out = armijo_search(&p, &x, &geo, start, &params).unwrap();
        assert!(out.backtracks > 0);
        let floor = (2.0 * (1.0 - params.mu) * 1.0 * params.delta / 50.0).min(start);
        assert!(out.alpha >= floor);
    }

    #[test]
    fn armijo_exhaustion() {
        // Ascent direction: sufficient decrease never holds.
        let p = half_norm_sq(1);
        let geo = GeometryResult {
            dual_y: DVector::zeros(0),
            reduced_cost_r: dv(&[-1.0]),
            direction_v: dv(&[1.0]),
            v_norm_x_sq: 1.0,
        };
        let params = ArmijoParams { max_backtracks: 5, ..Default::default() };
        assert_eq!(armijo_search(&p, &dv(&[1.0]), &geo, 1.0, &params), Err(Error::ArmijoExhausted(5)));
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { boundary_safety_tau: 1.0, ..Default::default() },
            SolverConfig { armijo: ArmijoParams { mu: 0.0, ..Default::default() }, ..Default::default() },
            SolverConfig { armijo: ArmijoParams { delta: 1.0, ..Default::default() }, ..Default::default() },
            SolverConfig { lipschitz_l: Some(0.0), ..Default::default() },
            SolverConfig { max_iterations: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn simplex_projection(c: &DVector<f64>) -> DVector<f64> {
        let mut u: Vec<f64> = c.iter().copied().collect();
        u.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            cum += uj;
            let t = (cum - 1.0) / (j + 1) as f64;
            if uj - t > 0.0 {
                theta = t;
            }
        }
        c.map(|ci| (ci - theta).max(0.0))
    }

    #[test]
    fn convex_qp_converges_to_simplex_projection() {
        let c = dv(&[0.5, 0.3, 0.2, 0.1]);
        let n = c.len();
        let p = make_quadratic(DMatrix::identity(n, n), -&c, ConstraintSystem::simplex(n)).unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
        let x0 = DVector::from_element(n, 1.0 / n as f64);
        let report = hba_solve(&p, &x0, &kernels, &SolverConfig::default()).unwrap();
        assert_eq!(report.termination, Termination::ToleranceMet);
        assert_eq!(report.stop_rule, Some(StopRule::Complementarity));
        assert!(report.final_kkt.complementarity <= 1e-8);
        let proj = simplex_projection(&c);
        assert!((&report.final_x - &proj).amax() <= 1e-5, "{} vs {}", report.final_x, proj);
        for w in report.trace.windows(2) {
            assert!(w[1].f_value <= w[0].f_value);
        }
        assert_eq!(report.trace.last().unwrap().step_alpha, 0.0);
    }

    #[test]
    fn stationary_start() {
        // f = 3·Σx on the simplex: gradient lies in the row space of A.
        let n = 3;
        let p = make_quadratic(DMatrix::zeros(n, n), DVector::from_element(n, 3.0), ConstraintSystem::simplex(n)).unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
        let x0 = dv(&[0.2, 0.3, 0.5]);
        let report = hba_solve(&p, &x0, &kernels, &SolverConfig::default()).unwrap();
        assert_eq!(report.termination, Termination::StationaryStart);
        assert_eq!(report.trace.len(), 1);
        assert_eq!(report.final_x, x0);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let p = make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2), ConstraintSystem::simplex(2)).unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
        for x0 in [dv(&[0.6, 0.6]), dv(&[1.0, 0.0]), dv(&[1.5, -0.5])] {
            assert!(matches!(hba_solve(&p, &x0, &kernels, &SolverConfig::default()), Err(Error::InfeasibleStart(_))));
        }
    }

    #[test]
    fn max_iterations_caps_trace() {
        let p = make_rosenbrock_box().unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
        let cfg = SolverConfig { max_iterations: 25, ..Default::default() };
        let report = hba_solve(&p, p.start().unwrap(), &kernels, &cfg).unwrap();
        assert_eq!(report.termination, Termination::MaxIterations);
        assert_eq!(report.trace.len(), 26);
        assert_eq!(report.iterations(), 25);
    }

    #[test]
    fn rosenbrock_reaches_optimum() {
        let p = make_rosenbrock_box().unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 0.0 }).unwrap();
        let cfg = SolverConfig { max_iterations: 400_000, ..Default::default() };
        let mut monitor = InvariantMonitor::new(&p, &kernels, &cfg);
        let report = hba_solve_observed(&p, p.start().unwrap(), &kernels, &cfg, |e| monitor.observe(e)).unwrap();
        let z = p.lift().unwrap().unlift(&report.final_x);
        assert!((z[0] - 1.0).abs() <= 1e-3 && (z[1] - 1.0).abs() <= 1e-3, "{z}");
        assert!(report.final_f <= 1e-6);
        assert_eq!(monitor.total_violations(), 0, "{monitor:?}");
        assert_eq!(monitor.steps, report.iterations());
    }

    #[test]
    fn invariants_on_random_qps() {
        for seed in 0..5 {
            let (p, x0) = crate::problems::random_nonconvex_qp(12, 3, 3, seed).unwrap();
            let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 1.0 }).unwrap();
            let cfg = SolverConfig { max_iterations: 3000, ..Default::default() };
            let mut monitor = InvariantMonitor::new(&p, &kernels, &cfg);
            let report = hba_solve_observed(&p, &x0, &kernels, &cfg, |e| monitor.observe(e)).unwrap();
            assert_ne!(report.termination, Termination::NumericalFailure, "{:?}", report.failure);
            assert_eq!(monitor.total_violations(), 0, "seed {seed}: {monitor:?}");
        }
    }

    #[test]
    fn vanishing_increments() {
        let (p, x0) = crate::problems::random_nonconvex_qp(10, 2, 2, 7).unwrap();
        let kernels = kernels_for(&p, &KernelSpec::Gibbs { beta: 1.0 }).unwrap();
        let cfg = SolverConfig { max_iterations: 2000, ..Default::default() };
        let mut steps = Vec::new();
        hba_solve_observed(&p, &x0, &kernels, &cfg, |e| steps.push((e.x_new - e.x).norm())).unwrap();
        let w = (steps.len() / 10).max(1);
        let head = steps[..w].iter().copied().fold(0.0, f64::max);
        let tail = steps[steps.len() - w..].iter().copied().fold(0.0, f64::max);
        assert!(tail <= head, "{tail} > {head}");
    }

    #[test]
    fn mirror_step_examples() {
        let cs = ConstraintSystem::simplex(2);
        let x = dv(&[0.5, 0.5]);
        assert_eq!(mirror_step(&cs, &x, &DVector::zeros(2), 1.0).unwrap(), x);
        let out = mirror_step(&cs, &x, &dv(&[2f64.ln(), 0.0]), 1.0).unwrap();
        assert_relative_eq!(out, dv(&[1.0 / 3.0, 2.0 / 3.0]), epsilon = 1e-15);
        let u = DVector::from_element(4, 0.25);
        let cs4 = ConstraintSystem::simplex(4);
        assert_relative_eq!(mirror_step(&cs4, &u, &DVector::from_element(4, 7.0), 0.3).unwrap(), u, epsilon = 1e-15);
        assert_eq!(mirror_step(&ConstraintSystem::unconstrained(2), &x, &x, 1.0), Err(Error::UnsupportedGeometry));
    }

    #[test]
    fn mirror_descent_converges_on_simplex_qp() {
        let c = dv(&[0.5, 0.3, 0.2, 0.1]);
        let n = c.len();
        let p = make_quadratic(DMatrix::identity(n, n), -&c, ConstraintSystem::simplex(n)).unwrap();
        let x0 = DVector::from_element(n, 0.25);
        let cfg = SolverConfig { max_iterations: 20_000, ..Default::default() };
        let alpha = default_md_step(&p, &x0, &cfg).unwrap();
        let report = mirror_descent_solve(&p, &x0, StepSchedule::Constant { alpha }, &cfg).unwrap();
        assert!((&report.final_x - simplex_projection(&c)).amax() <= 1e-3);
        let sqrt = mirror_descent_solve(&p, &x0, StepSchedule::InverseSqrt { alpha }, &cfg).unwrap();
        assert!(sqrt.final_f.is_finite());
        let bad = make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2), ConstraintSystem::unconstrained(2)).unwrap();
        assert!(matches!(
            mirror_descent_solve(&bad, &dv(&[1.0, 1.0]), StepSchedule::Constant { alpha: 1.0 }, &cfg),
            Err(Error::UnsupportedGeometry)
        ));
    }

    fn random_quadratic(n: usize, rng: &mut impl Rng) -> Arc<dyn Objective> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &m * m.transpose();
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        Arc::new(QuadraticObjective::new(q, c).unwrap())
    }

    #[test]
    fn special_cases_match_closed_forms() {
        let mut rng = rng::stream(1, "special-case-test");
        for _ in 0..20 {
            let n = 6;
            let x = DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0));
            let lv = SpecialCaseInstance {
                x: x.clone(),
                constraints: ConstraintSystem::unconstrained(n),
                kernels: vec![Kernel::tsallis(0.0, 1.5).unwrap(); n],
                objective: random_quadratic(n, &mut rng),
                alpha: 0.1,
            };
            assert!(check_special_case_equivalence(SpecialCase::LotkaVolterra, &lv).unwrap() <= 1e-12);

            let simplex_x = &x / x.sum();
            let rd = SpecialCaseInstance {
                x: simplex_x,
                constraints: ConstraintSystem::simplex(n),
                kernels: gibbs(n, 1.0),
                objective: random_quadratic(n, &mut rng),
                alpha: 0.2,
            };
            assert!(check_special_case_equivalence(SpecialCase::Replicator, &rd).unwrap() <= 1e-12);
            assert!(matches!(
                check_special_case_equivalence(SpecialCase::LotkaVolterra, &rd),
                Err(Error::StructuralMismatch(_))
            ));

            let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.0..3.0)));
            let rn = SpecialCaseInstance {
                x: x.clone(),
                constraints: ConstraintSystem::unconstrained(n),
                kernels: gibbs(n, 1.0),
                objective: Arc::new(QuadraticObjective::new(q, DVector::from_element(n, 0.5)).unwrap()),
                alpha: 0.7,
            };
            let dev = check_special_case_equivalence(SpecialCase::RegularizedNewton { beta: 0.5 }, &rn).unwrap();
            assert!(dev <= 1e-12);
            assert!(check_special_case_equivalence(SpecialCase::RegularizedNewton { beta: 0.5 }, &lv).is_err());
        }
    }

    #[test]
    fn affine_scaling_requires_linear_objective() {
        let n = 4;
        let a = DMatrix::from_row_slice(1, n, &[1.0, 2.0, 0.5, 1.0]);
        let x = dv(&[0.3, 0.2, 0.6, 0.4]);
        let cs = ConstraintSystem::new(a.clone(), &a * &x).unwrap();
        let linear = Arc::new(QuadraticObjective::new(DMatrix::zeros(n, n), dv(&[1.0, -1.0, 0.5, 2.0])).unwrap());
        let inst = SpecialCaseInstance {
            x: x.clone(),
            constraints: cs.clone(),
            kernels: vec![Kernel::burg(0.0).unwrap(); n],
            objective: linear,
            alpha: 0.05,
        };
        assert!(check_special_case_equivalence(SpecialCase::AffineScaling, &inst).unwrap() <= 1e-12);
        let curved = SpecialCaseInstance { objective: Arc::new(QuadraticObjective::new(DMatrix::identity(n, n), DVector::zeros(n)).unwrap()), ..inst };
        assert!(matches!(
            check_special_case_equivalence(SpecialCase::AffineScaling, &curved),
            Err(Error::StructuralMismatch(_))
        ));
    }
}
