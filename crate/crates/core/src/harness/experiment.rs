//! One configured run: HBA, optionally the mirror-descent baseline from the
//! same start with the same budget, and the artifacts describing both.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::plot::{emit_plot, PlotKind, PlotSeries};
use super::rate::{estimate_f_infinity, fit_rate, FInfinityMethod, RateReport, DEFAULT_TAIL_FRACTION};
use super::trace::{trace_to_csv, trajectory_to_csv, write_atomic};
use crate::error::{Error, Result};
use crate::kernels::{max_omega, KernelSpec};
use crate::problems::{make_beale_box, make_rosenbrock_box, random_nonconvex_qp, Problem, ProblemFile};
use crate::solver::{
    default_md_step, hba_solve_observed, kernels_for, mirror_descent_solve, InvariantCounts, InvariantMonitor,
    SolveReport, SolverConfig, StepSchedule, StopRule, Termination,
};
use crate::tap::{generate_tap_instance, tap_problem, TapGenConfig, TapInstance, TapObjectiveMode};

/// Where the problem comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ProblemSource {
    /// A JSON problem file.
    File { path: PathBuf },
    Rosenbrock,
    Beale,
    /// Random nonconvex QP seeded by the experiment seed.
    NonconvexQp { n: usize, m: usize, negative_eigs: usize },
    /// Random TAP instance seeded by the experiment seed.
    Tap {
        vertices: usize,
        od_pairs: usize,
        paths_per_pair: usize,
        #[serde(default = "default_attachment")]
        attachment_m: usize,
        #[serde(default)]
        mode: TapObjectiveMode,
    },
    /// A TAP instance JSON file.
    TapFile {
        path: PathBuf,
        #[serde(default)]
        mode: TapObjectiveMode,
    },
}

fn default_attachment() -> usize {
    2
}

impl ProblemSource {
    /// Builds the problem and its starting point.
    pub fn build(&self, seed: u64) -> Result<(Problem, DVector<f64>)> {
        let problem = match self {
            ProblemSource::File { path } => ProblemFile::load(path)?.build()?,
            ProblemSource::Rosenbrock => make_rosenbrock_box()?,
            ProblemSource::Beale => make_beale_box()?,
            ProblemSource::NonconvexQp { n, m, negative_eigs } => random_nonconvex_qp(*n, *m, *negative_eigs, seed)?.0,
            ProblemSource::Tap { vertices, od_pairs, paths_per_pair, attachment_m, mode } => {
                let cfg = TapGenConfig {
                    vertices: *vertices,
                    od_pairs: *od_pairs,
                    paths_per_pair: *paths_per_pair,
                    attachment_m: *attachment_m,
                    seed,
                };
                let (instance, _) = generate_tap_instance(&cfg)?;
                tap_problem(Arc::new(instance), *mode)?
            }
            ProblemSource::TapFile { path, mode } => tap_problem(Arc::new(TapInstance::load(path)?), *mode)?,
        };
        let x0 = problem
            .start()
            .cloned()
            .ok_or_else(|| Error::InfeasibleStart("the problem has no starting point; add `start`".into()))?;
        Ok((problem, x0))
    }
}

/// Mirror-descent baseline; without a schedule, a constant step equal to
/// the HBA bootstrap step at the start is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
}

/// How `f_∞` is chosen for gap plots and rate fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FInfinitySetting {
    Value(f64),
    Method(FInfinityKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FInfinityKeyword {
    /// The known optimum when the problem has one, else the long-run best.
    Auto,
    KnownOptimum,
    LongRunBest,
}

impl Default for FInfinitySetting {
    fn default() -> Self {
        FInfinitySetting::Method(FInfinityKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemSource,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_plots")]
    pub plots: Vec<PlotKind>,
    #[serde(default)]
    pub f_infinity: FInfinitySetting,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_kernel() -> KernelSpec {
    KernelSpec::Gibbs { beta: 0.0 }
}

fn default_plots() -> Vec<PlotKind> {
    vec![PlotKind::ValueVsIter, PlotKind::LogLogGap]
}

fn default_tail() -> f64 {
    DEFAULT_TAIL_FRACTION
}

impl ExperimentConfig {
    pub fn new(name: &str, problem: ProblemSource, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            problem,
            kernel: default_kernel(),
            solver: SolverConfig::default(),
            baseline: None,
            seed: 0,
            output_dir: output_dir.into(),
            plots: default_plots(),
            f_infinity: FInfinitySetting::default(),
            tail_fraction: DEFAULT_TAIL_FRACTION,
        }
    }

    /// Parses TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub stop_rule: Option<StopRule>,
    pub failure: Option<String>,
    pub iterations: usize,
    pub f_initial: f64,
    pub f_final: f64,
    pub complementarity: f64,
    pub dual_feasibility_violation: f64,
    pub wall_time_seconds: f64,
    pub trace_file: String,
}

impl RunSummary {
    fn new(report: &SolveReport, f_initial: f64, seconds: f64, trace_file: &str) -> Self {
        Self {
            termination: report.termination,
            stop_rule: report.stop_rule,
            failure: report.failure.as_ref().map(ToString::to_string),
            iterations: report.iterations(),
            f_initial,
            f_final: report.final_f,
            complementarity: report.final_kkt.complementarity,
            dual_feasibility_violation: report.final_kkt.dual_feasibility_violation,
            wall_time_seconds: seconds,
            trace_file: trace_file.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub problem: String,
    pub n: usize,
    pub m: usize,
    pub lipschitz_l: f64,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub known_optimum: Option<f64>,
    pub hba: RunSummary,
    pub invariants: InvariantCounts,
    pub baseline: Option<RunSummary>,
    pub baseline_schedule: Option<StepSchedule>,
    /// `(f_MD − f_HBA) / (f₀ − f_ref)`, with `f_ref` the known optimum or
    /// the better of the two final values.
    pub relative_improvement: Option<f64>,
    /// `(f₀ − f_HBA) / (f₀ − f*)`, the share of the initial gap closed.
    pub gap_reduction: Option<f64>,
    pub f_infinity: Option<f64>,
    pub rate: Option<RateReport>,
    pub rate_note: Option<String>,
    pub plots: Vec<String>,
}

/// Artifacts of [`run_experiment`] kept in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub hba: SolveReport,
    pub baseline: Option<SolveReport>,
    /// Unlifted iterates for 2-D box problems.
    pub trajectory: Option<Vec<(f64, f64)>>,
}

pub const TRACE_FILE: &str = "trace.csv";
pub const BASELINE_TRACE_FILE: &str = "md_trace.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn plot_file(kind: PlotKind) -> &'static str {
    match kind {
        PlotKind::ValueVsIter => "value_vs_iter.svg",
        PlotKind::LogLogGap => "loglog_gap.svg",
        PlotKind::Trajectory2D => "trajectory.svg",
    }
}

fn resolve_f_infinity(setting: FInfinitySetting, known: Option<f64>, traces: &[&SolveReport]) -> Result<f64> {
    let merged: Vec<_> = traces.iter().flat_map(|r| r.trace.iter().copied()).collect();
    match setting {
        FInfinitySetting::Value(v) => Ok(v),
        FInfinitySetting::Method(FInfinityKeyword::KnownOptimum) => {
            estimate_f_infinity(&merged, FInfinityMethod::KnownOptimum, known)
        }
        FInfinitySetting::Method(FInfinityKeyword::LongRunBest) => {
            estimate_f_infinity(&merged, FInfinityMethod::LongRunBest, None)
        }
        FInfinitySetting::Method(FInfinityKeyword::Auto) => match known {
            Some(f) => Ok(f),
            None => estimate_f_infinity(&merged, FInfinityMethod::LongRunBest, None),
        },
    }
}

/// Runs one experiment and writes its artifacts into `config.output_dir`.
///
/// Solver breakdowns do not make this fail: they are recorded in the summary
/// next to the partial trace. Configuration problems are returned as errors
/// before anything is written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.solver.validate()?;
    let (problem, x0) = config.problem.build(config.seed)?;
    let kernels = kernels_for(&problem, &config.kernel)?;
    let lift_2d = problem.lift().filter(|l| l.dimension() == 2).cloned();
    if config.plots.contains(&PlotKind::Trajectory2D) && lift_2d.is_none() {
        return Err(Error::UnsupportedKind("trajectory2d needs a two-dimensional box problem".into()));
    }
    let baseline_schedule = match &config.baseline {
        Some(b) => Some(match b.schedule {
            Some(s) => s,
            None => StepSchedule::Constant { alpha: default_md_step(&problem, &x0, &config.solver)? },
        }),
        None => None,
    };

    let f0 = problem.value(&x0);
    let mut monitor = InvariantMonitor::new(&problem, &kernels, &config.solver);
    let mut trajectory = lift_2d.as_ref().map(|l| {
        let z = l.unlift(&x0);
        vec![(z[0], z[1])]
    });
    let started = Instant::now();
    let hba = hba_solve_observed(&problem, &x0, &kernels, &config.solver, |ev| {
        monitor.observe(ev);
        if let (Some(points), Some(l)) = (trajectory.as_mut(), lift_2d.as_ref()) {
            let z = l.unlift(ev.x_new);
            points.push((z[0], z[1]));
        }
    })?;
    let hba_seconds = started.elapsed().as_secs_f64();

    let baseline = match baseline_schedule {
        Some(schedule) => {
            let started = Instant::now();
            let report = mirror_descent_solve(&problem, &x0, schedule, &config.solver)?;
            Some((report, started.elapsed().as_secs_f64()))
        }
        None => None,
    };

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(TRACE_FILE), &trace_to_csv(&hba.trace)?)?;
    if let Some((md, _)) = &baseline {
        write_atomic(&dir.join(BASELINE_TRACE_FILE), &trace_to_csv(&md.trace)?)?;
    }
    if let Some(points) = &trajectory {
        write_atomic(&dir.join(TRAJECTORY_FILE), &trajectory_to_csv(points)?)?;
    }

    let known = problem.known_optimum().map(|o| o.f);
    let mut reports = vec![&hba];
    if let Some((md, _)) = &baseline {
        reports.push(md);
    }
    let f_inf = resolve_f_infinity(config.f_infinity, known, &reports);
    let (rate, rate_note) = match &f_inf {
        Ok(f) => match fit_rate(&hba.trace, *f, config.tail_fraction, max_omega(&kernels)) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        },
        Err(e) => (None, Some(e.to_string())),
    };

    let mut plots = Vec::new();
    for &kind in &config.plots {
        let mut series = Vec::new();
        match kind {
            PlotKind::ValueVsIter => {
                series.push(PlotSeries::value_vs_iter("HBA", &hba.trace));
                if let Some((md, _)) = &baseline {
                    series.push(PlotSeries::value_vs_iter("MD", &md.trace));
                }
            }
            PlotKind::LogLogGap => {
                let Ok(f) = f_inf else { continue };
                series.push(PlotSeries::log_gap("HBA", &hba.trace, f));
                if let Some((md, _)) = &baseline {
                    series.push(PlotSeries::log_gap("MD", &md.trace, f));
                }
                series.retain(|s| !s.points.is_empty());
            }
            PlotKind::Trajectory2D => {
                series.push(PlotSeries::trajectory("HBA", trajectory.as_deref().unwrap_or_default()));
            }
        }
        if series.is_empty() {
            continue;
        }
        let svg = emit_plot(&series, kind, &format!("{} ({})", config.name, problem.name()))?;
        write_atomic(&dir.join(plot_file(kind)), svg.as_bytes())?;
        plots.push(plot_file(kind).to_string());
    }

    let hba_summary = RunSummary::new(&hba, f0, hba_seconds, TRACE_FILE);
    let md_summary = baseline.as_ref().map(|(md, secs)| RunSummary::new(md, f0, *secs, BASELINE_TRACE_FILE));
    let relative_improvement = md_summary.as_ref().map(|md| {
        let f_ref = known.unwrap_or(md.f_final.min(hba.final_f));
        (md.f_final - hba.final_f) / (f0 - f_ref)
    });
    let summary = ExperimentSummary {
        name: config.name.clone(),
        problem: problem.name().to_string(),
        n: problem.dimension(),
        m: problem.constraints().m(),
        lipschitz_l: config.solver.effective_lipschitz(&problem),
        kernel: config.kernel,
        seed: config.seed,
        known_optimum: known,
        hba: hba_summary,
        invariants: monitor.counts(),
        baseline: md_summary,
        baseline_schedule,
        relative_improvement,
        gap_reduction: known.map(|f_star| (f0 - hba.final_f) / (f0 - f_star)),
        f_infinity: f_inf.ok(),
        rate,
        rate_note,
        plots,
    };
    write_atomic(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(ExperimentOutcome { summary, hba, baseline: baseline.map(|(r, _)| r), trajectory })
}
