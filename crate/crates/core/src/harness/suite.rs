//! Built-in benchmark batches.
//!
//! Experiments of a batch run concurrently on a rayon pool whose size is
//! capped by `HESSBAR_THREADS`. Each gets its own seed, derived from the
//! batch seed and the run index, and its own output subdirectory, so the
//! artifacts do not depend on scheduling.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, BaselineConfig, ExperimentConfig, ExperimentSummary, FInfinityKeyword, FInfinitySetting, ProblemSource};
use super::plot::PlotKind;
use super::rate::{check_rate_bound, RateCompliance, MIN_TRACE_LEN};
use super::trace::write_atomic;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::solver::{StopRule, Termination};
use crate::tap::TapObjectiveMode;

pub const THREADS_ENV: &str = "HESSBAR_THREADS";
pub const SUITE_SUMMARY_FILE: &str = "suite_summary.json";

/// Iteration cap for the two 2-D box benchmarks.
pub const BOX_BUDGET: usize = 100_000;
pub const QP_RUNS: usize = 20;
pub const QP_BUDGET: usize = 100_000;
/// Relative slack on `gap(k) ≤ C·k^(−ρ)`.
pub const RATE_SLACK: f64 = 1.1;
pub const TAP_RUNS: usize = 20;
/// Shared HBA / MD iteration budget on TAP instances.
pub const TAP_BUDGET: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Rosenbrock,
    Beale,
    Qp,
    Tap,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rosenbrock" => Ok(Suite::Rosenbrock),
            "beale" => Ok(Suite::Beale),
            "qp" => Ok(Suite::Qp),
            "tap" => Ok(Suite::Tap),
            other => Err(Error::InvalidParameter(format!("unknown suite `{other}` (rosenbrock, beale, qp, tap)"))),
        }
    }
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Rosenbrock, Suite::Beale, Suite::Qp, Suite::Tap];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Rosenbrock => "rosenbrock",
            Suite::Beale => "beale",
            Suite::Qp => "qp",
            Suite::Tap => "tap",
        }
    }

    /// The experiments of this batch, each writing under `out/<name>`.
    pub fn configs(self, seed: u64, out: &Path) -> Vec<ExperimentConfig> {
        match self {
            Suite::Rosenbrock | Suite::Beale => {
                let source = if self == Suite::Rosenbrock { ProblemSource::Rosenbrock } else { ProblemSource::Beale };
                let mut cfg = ExperimentConfig::new(self.name(), source, out.join(self.name()));
                cfg.seed = seed;
                cfg.solver.max_iterations = BOX_BUDGET;
                cfg.plots = vec![PlotKind::ValueVsIter, PlotKind::LogLogGap, PlotKind::Trajectory2D];
                vec![cfg]
            }
            Suite::Qp => (0..QP_RUNS)
                .map(|i| {
                    let name = format!("qp-{i:02}");
                    let source = ProblemSource::NonconvexQp { n: 20, m: 5, negative_eigs: 5 };
                    let mut cfg = ExperimentConfig::new(&name, source, out.join(&name));
                    cfg.seed = derive_seed(seed, &name);
                    cfg.solver.max_iterations = QP_BUDGET;
                    cfg.f_infinity = FInfinitySetting::Method(FInfinityKeyword::LongRunBest);
                    cfg
                })
                .collect(),
            Suite::Tap => (0..TAP_RUNS)
                .map(|i| {
                    let name = format!("tap-{i:02}");
                    let source = ProblemSource::Tap {
                        vertices: 50,
                        od_pairs: 100,
                        paths_per_pair: 20,
                        attachment_m: 2,
                        mode: TapObjectiveMode::PathCostSum,
                    };
                    let mut cfg = ExperimentConfig::new(&name, source, out.join(&name));
                    cfg.seed = derive_seed(seed, &name);
                    cfg.solver.max_iterations = TAP_BUDGET;
                    cfg.baseline = Some(BaselineConfig::default());
                    cfg
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRun {
    pub summary: ExperimentSummary,
    pub rate_compliance: Option<RateCompliance>,
    /// Why the run was left out of the rate check, if it was.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateAggregate {
    pub checked: usize,
    pub compliant: usize,
    pub excluded: usize,
    pub rho_predicted: f64,
    pub mean_rho_fitted: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapAggregate {
    pub runs: usize,
    /// Runs where HBA's final latency is at most MD's.
    pub hba_not_worse: usize,
    pub min_gap_reduction: f64,
    pub mean_gap_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub suite: Suite,
    pub seed: u64,
    pub runs: Vec<SuiteRun>,
    pub invariant_violations: usize,
    pub numerical_failures: usize,
    pub rate: Option<RateAggregate>,
    pub tap: Option<TapAggregate>,
    pub wall_time_seconds: f64,
}

/// Thread count from `HESSBAR_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Runs `configs` concurrently; results keep the input order.
pub fn run_batch(configs: &[ExperimentConfig]) -> Result<Vec<super::experiment::ExperimentOutcome>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    pool.install(|| configs.par_iter().map(run_experiment).collect())
}

fn rate_check(outcome: &super::experiment::ExperimentOutcome, tail: f64) -> (Option<RateCompliance>, Option<String>) {
    let s = &outcome.summary;
    let stationary = s.hba.termination == Termination::StationaryStart || s.hba.stop_rule == Some(StopRule::Stationary);
    if stationary {
        return (None, Some("reached exact stationarity".into()));
    }
    if outcome.hba.trace.len() < MIN_TRACE_LEN {
        return (None, Some(format!("converged in {} iterations", outcome.hba.trace.len() - 1)));
    }
    let (Some(rate), Some(f_inf)) = (s.rate, s.f_infinity) else {
        return (None, s.rate_note.clone().or(Some("no rate fit".into())));
    };
    match check_rate_bound(&outcome.hba.trace, f_inf, tail, rate.rho_predicted, RATE_SLACK) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Runs a suite into `out` and writes `suite_summary.json` there.
pub fn run_suite(suite: Suite, seed: u64, out: &Path) -> Result<SuiteSummary> {
    let started = std::time::Instant::now();
    let configs = suite.configs(seed, out);
    let outcomes = run_batch(&configs)?;
    let mut runs = Vec::with_capacity(outcomes.len());
    for (cfg, o) in configs.iter().zip(&outcomes) {
        let (rate_compliance, excluded) =
            if suite == Suite::Qp { rate_check(o, cfg.tail_fraction) } else { (None, None) };
        runs.push(SuiteRun { summary: o.summary.clone(), rate_compliance, excluded });
    }

    let rate = (suite == Suite::Qp).then(|| {
        let fitted: Vec<f64> = runs.iter().filter(|r| r.excluded.is_none()).filter_map(|r| r.summary.rate.map(|x| x.rho_fitted)).collect();
        RateAggregate {
            checked: runs.iter().filter(|r| r.rate_compliance.is_some()).count(),
            compliant: runs.iter().filter(|r| r.rate_compliance.is_some_and(|c| c.violations == 0)).count(),
            excluded: runs.iter().filter(|r| r.excluded.is_some()).count(),
            rho_predicted: runs.first().and_then(|r| r.summary.rate.map(|x| x.rho_predicted)).unwrap_or(1.0),
            mean_rho_fitted: (!fitted.is_empty()).then(|| fitted.iter().sum::<f64>() / fitted.len() as f64),
        }
    });
    let tap = (suite == Suite::Tap).then(|| {
        let reductions: Vec<f64> = runs.iter().filter_map(|r| r.summary.gap_reduction).collect();
        TapAggregate {
            runs: runs.len(),
            hba_not_worse: runs
                .iter()
                .filter(|r| r.summary.baseline.as_ref().is_some_and(|md| r.summary.hba.f_final <= md.f_final))
                .count(),
            min_gap_reduction: reductions.iter().copied().fold(f64::INFINITY, f64::min),
            mean_gap_reduction: reductions.iter().sum::<f64>() / reductions.len().max(1) as f64,
        }
    });

    let summary = SuiteSummary {
        suite,
        seed,
        invariant_violations: runs.iter().map(|r| r.summary.invariants.total_violations()).sum(),
        numerical_failures: runs.iter().filter(|r| r.summary.hba.termination == Termination::NumericalFailure).count(),
        runs,
        rate,
        tap,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_atomic(&out.join(SUITE_SUMMARY_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_configs_are_distinct_and_stable() {
        let out = Path::new("o");
        let a = Suite::Qp.configs(3, out);
        assert_eq!(a.len(), QP_RUNS);
        let mut seeds: Vec<_> = a.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), QP_RUNS);
        assert_eq!(a, Suite::Qp.configs(3, out));
        assert_ne!(a[0].seed, Suite::Qp.configs(4, out)[0].seed);
        assert_eq!(Suite::Tap.configs(0, out)[5].output_dir, Path::new("o/tap-05"));
        assert!("TAP".parse::<Suite>().is_ok() && "lp".parse::<Suite>().is_err());
    }
}
