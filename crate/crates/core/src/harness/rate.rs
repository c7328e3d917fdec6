//! Empirical convergence rates.
//!
//! For kernels with steepness exponent `ω`, the optimality gap of HBA decays
//! like `O(k^(−ρ))` with `ρ = 1/(2·max(1, ω) − 1)`. The fit here regresses
//! `log(gap)` on `log k` over the tail of a trace.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::IterationRecord;

/// Shortest trace accepted by [`fit_rate`].
pub const MIN_TRACE_LEN: usize = 100;
/// Fewest usable tail points accepted by [`fit_rate`].
pub const MIN_TAIL_POINTS: usize = 20;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
const GAP_FLOOR: f64 = 1e-30;

pub fn predicted_rho(omega: f64) -> f64 {
    1.0 / (2.0 * omega.max(1.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rho_predicted: f64,
    pub rho_fitted: f64,
    pub f_infinity_estimate: f64,
    /// Inclusive iteration range of the regression.
    pub fit_window: (usize, usize),
    pub fit_r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FInfinityMethod {
    KnownOptimum,
    LongRunBest,
}

/// Margin subtracted from the best trace value by [`FInfinityMethod::LongRunBest`].
pub const LONG_RUN_MARGIN: f64 = 1e-12;

pub fn estimate_f_infinity(trace: &[IterationRecord], method: FInfinityMethod, known: Option<f64>) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    match method {
        FInfinityMethod::KnownOptimum => known.ok_or(Error::KnownOptimumUnavailable),
        FInfinityMethod::LongRunBest => {
            let best = trace.iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min);
            Ok(best - LONG_RUN_MARGIN * (1.0 + best.abs()))
        }
    }
}

/// Tail points `(k, gap)` with `k ≥ 1` and a positive gap.
fn tail_points(trace: &[IterationRecord], f_infinity: f64, tail_fraction: f64) -> Vec<(usize, f64)> {
    let usable: Vec<(usize, f64)> = trace
        .iter()
        .filter(|r| r.k >= 1)
        .map(|r| (r.k, r.f_value - f_infinity))
        .filter(|&(_, g)| g > 0.0)
        .collect();
    let take = ((usable.len() as f64) * tail_fraction).ceil() as usize;
    usable[usable.len() - take.min(usable.len())..].to_vec()
}

/// Least-squares slope of `log(gap + 10⁻³⁰)` against `log k` over the tail.
pub fn fit_rate(trace: &[IterationRecord], f_infinity: f64, tail_fraction: f64, omega: f64) -> Result<RateReport> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction must lie in (0,1], got {tail_fraction}")));
    }
    if trace.len() < MIN_TRACE_LEN {
        return Err(Error::InsufficientData(format!("trace has {} records, need {MIN_TRACE_LEN}", trace.len())));
    }
    let tail = tail_points(trace, f_infinity, tail_fraction);
    if tail.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData(format!("{} usable tail points, need {MIN_TAIL_POINTS}", tail.len())));
    }
    let xs: Vec<f64> = tail.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|&(_, g)| (g + GAP_FLOOR).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateReport {
        rho_predicted: predicted_rho(omega),
        rho_fitted: -slope,
        f_infinity_estimate: f_infinity,
        fit_window: (tail[0].0, tail[tail.len() - 1].0),
        fit_r_squared: r2,
    })
}

/// Outcome of checking `gap(k) ≤ slack·C·k^(−ρ)` over a tail window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCompliance {
    /// `C = gap(k₀)·k₀^ρ` at the window start `k₀`.
    pub constant_c: f64,
    pub window_start: usize,
    pub checked: usize,
    pub violations: usize,
    /// Largest `gap(k) / (C·k^(−ρ))` seen.
    pub worst_ratio: f64,
}

pub fn check_rate_bound(
    trace: &[IterationRecord],
    f_infinity: f64,
    tail_fraction: f64,
    rho: f64,
    slack: f64,
) -> Result<RateCompliance> {
    let tail = tail_points(trace, f_infinity, tail_fraction);
    let &(k0, g0) = tail.first().ok_or_else(|| Error::InsufficientData("no positive gaps in the tail".into()))?;
    let c = g0 * (k0 as f64).powf(rho);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for &(k, g) in &tail[1..] {
        let bound = c * (k as f64).powf(-rho);
        worst = worst.max(g / bound);
        if g > slack * bound {
            violations += 1;
        }
    }
    Ok(RateCompliance { constant_c: c, window_start: k0, checked: tail.len() - 1, violations, worst_ratio: worst })
}
