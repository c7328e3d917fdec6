use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hessbar::harness::{
    emit_plot, estimate_f_infinity, fit_rate, load_trace, load_trajectory, run_experiment, run_suite, write_atomic,
    BaselineConfig, ExperimentConfig, FInfinityMethod, PlotKind, PlotSeries, ProblemSource, Suite,
};
use hessbar::solver::{SolverConfig, Termination};
use hessbar::tap::{generate_tap_instance, TapGenConfig, TapObjectiveMode};
use hessbar::{Error, KernelSpec};

/// Like `println!`, but a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_FAILURE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "hessbar", version, about = "Hessian barrier algorithm for linearly constrained optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelName {
    Gibbs,
    Tsallis,
    Burg,
    Mixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum TapMode {
    PathCost,
    EdgeLatency,
}

impl From<TapMode> for TapObjectiveMode {
    fn from(m: TapMode) -> Self {
        match m {
            TapMode::PathCost => TapObjectiveMode::PathCostSum,
            TapMode::EdgeLatency => TapObjectiveMode::TotalEdgeLatency,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file (or TAP instance file) with HBA.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "gibbs")]
        kernel: KernelName,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// Tsallis exponent.
        #[arg(long)]
        p: Option<f64>,
        /// Mixture weight of the Burg term.
        #[arg(long)]
        gamma: Option<f64>,
        /// TOML file with solver settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Also run mirror descent from the same start with the same budget.
        #[arg(long)]
        md: bool,
        #[arg(long, value_enum, default_value = "path-cost")]
        tap_mode: TapMode,
        /// Plot kinds to emit (value-vs-iter, log-log-gap, trajectory2d).
        #[arg(long, value_delimiter = ',')]
        plots: Option<Vec<String>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a TOML or JSON config.
    Run { config: PathBuf },
    /// Generate a random TAP instance.
    TapGen {
        #[arg(long)]
        vertices: usize,
        #[arg(long)]
        od_pairs: usize,
        #[arg(long)]
        paths: usize,
        #[arg(long, default_value_t = 2)]
        attachment_m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in benchmark batch.
    Benchmark {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Fit an empirical rate to a trace.
    RateFit {
        trace: PathBuf,
        /// `auto` (long-run best) or a number.
        #[arg(long, default_value = "auto")]
        f_inf: String,
        #[arg(long, default_value_t = 0.5)]
        tail: f64,
        /// Steepness exponent for the predicted rate.
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
    },
    /// Plot one or more traces (or trajectories) as SVG.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "value-vs-iter")]
        kind: String,
        #[arg(long, default_value = "auto")]
        f_inf: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Numerical(String),
    Other(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_)
            | Error::Format(_)
            | Error::DimensionMismatch { .. }
            | Error::RankDeficient { .. }
            | Error::InfeasibleStart(_)
            | Error::NotInterior { .. }
            | Error::UnsupportedKind(_)
            | Error::UnsupportedGeometry
            | Error::StructuralMismatch(_)
            | Error::KnownOptimumUnavailable
            | Error::Unreachable { .. }
            | Error::GenerationFailed(_) => CliError::Config(msg),
            Error::SingularMetricSystem | Error::ArmijoExhausted(_) => CliError::Numerical(msg),
            Error::InsufficientData(_) | Error::EmptyTrace | Error::Io(_) => CliError::Other(msg),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn kernel_spec(kernel: KernelName, beta: f64, p: Option<f64>, gamma: Option<f64>) -> CliResult<KernelSpec> {
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::Config(format!("--{flag} is required for this kernel")));
    Ok(match kernel {
        KernelName::Gibbs => KernelSpec::Gibbs { beta },
        KernelName::Tsallis => KernelSpec::Tsallis { beta, p: need(p, "p")? },
        KernelName::Burg => KernelSpec::Burg { beta },
        KernelName::Mixture => KernelSpec::Mixture { beta, gamma: need(gamma, "gamma")? },
    })
}

/// Solver settings from TOML, either at top level or under `[solver]`.
fn load_solver_config(path: &Path) -> CliResult<SolverConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let table = match table.remove("solver") {
        Some(toml::Value::Table(t)) => t,
        _ => table,
    };
    table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// TAP instance files are recognized by their `od_pairs` key.
fn problem_source(path: &Path, mode: TapObjectiveMode) -> CliResult<ProblemSource> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(if value.get("od_pairs").is_some() {
        ProblemSource::TapFile { path: path.to_path_buf(), mode }
    } else {
        ProblemSource::File { path: path.to_path_buf() }
    })
}

fn parse_plots(names: &[String]) -> CliResult<Vec<PlotKind>> {
    names.iter().map(|n| n.parse::<PlotKind>().map_err(CliError::from)).collect()
}

fn parse_f_inf(s: &str) -> CliResult<Option<f64>> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| CliError::Config(format!("--f-inf must be `auto` or a number, got `{s}`")))
}

fn experiment(config: &ExperimentConfig) -> CliResult<()> {
    let out = run_experiment(config)?;
    let s = &out.summary;
    say!(
        "{}: {:?} after {} iterations, f = {:.6e} (f0 = {:.6e})",
        s.problem, s.hba.termination, s.hba.iterations, s.hba.f_final, s.hba.f_initial
    );
    if let Some(md) = &s.baseline {
        say!("mirror descent: f = {:.6e} after {} iterations", md.f_final, md.iterations);
    }
    say!("artifacts in {}", config.output_dir.display());
    match (&s.hba.termination, &s.hba.failure) {
        (Termination::NumericalFailure, failure) => {
            Err(CliError::Numerical(failure.clone().unwrap_or_else(|| "numerical failure".into())))
        }
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve { problem, kernel, beta, p, gamma, config, max_iter, md, tap_mode, plots, seed, out } => {
            let mut solver = match &config {
                Some(path) => load_solver_config(path)?,
                None => SolverConfig::default(),
            };
            if let Some(k) = max_iter {
                solver.max_iterations = k;
            }
            let mut cfg = ExperimentConfig::new("solve", problem_source(&problem, tap_mode.into())?, out);
            cfg.kernel = kernel_spec(kernel, beta, p, gamma)?;
            cfg.solver = solver;
            cfg.seed = seed;
            cfg.baseline = md.then(BaselineConfig::default);
            if let Some(names) = plots {
                cfg.plots = parse_plots(&names)?;
            }
            experiment(&cfg)
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            experiment(&cfg)
        }
        Command::TapGen { vertices, od_pairs, paths, attachment_m, seed, out } => {
            let cfg = TapGenConfig { vertices, od_pairs, paths_per_pair: paths, attachment_m, seed };
            let (instance, _) = generate_tap_instance(&cfg)?;
            write_atomic(&out, instance.to_json()?.as_bytes())?;
            say!(
                "{} vertices, {} edges, {} O/D pairs, {} paths -> {}",
                instance.num_vertices(),
                instance.edges().len(),
                instance.od_pairs().len(),
                instance.num_paths(),
                out.display()
            );
            Ok(())
        }
        Command::Benchmark { suite, seed, out } => {
            let suite: Suite = suite.parse()?;
            let s = run_suite(suite, seed, &out)?;
            for r in &s.runs {
                let e = &r.summary;
                say!("{:<12} {:>8} it  f = {:.6e}  {:?}", e.name, e.hba.iterations, e.hba.f_final, e.hba.termination);
            }
            say!("invariant violations: {}", s.invariant_violations);
            if let Some(rate) = &s.rate {
                say!(
                    "rate check: {}/{} compliant, {} excluded, mean fitted rho {}",
                    rate.compliant,
                    rate.checked,
                    rate.excluded,
                    rate.mean_rho_fitted.map_or("n/a".into(), |r| format!("{r:.3}"))
                );
            }
            if let Some(tap) = &s.tap {
                say!(
                    "HBA <= MD on {}/{} seeds; gap reduction min {:.4}, mean {:.4}",
                    tap.hba_not_worse, tap.runs, tap.min_gap_reduction, tap.mean_gap_reduction
                );
            }
            if s.numerical_failures > 0 {
                return Err(CliError::Numerical(format!("{} runs ended in numerical failure", s.numerical_failures)));
            }
            Ok(())
        }
        Command::RateFit { trace, f_inf, tail, omega } => {
            let records = load_trace(&trace)?;
            let f_inf = match parse_f_inf(&f_inf)? {
                Some(v) => v,
                None => estimate_f_infinity(&records, FInfinityMethod::LongRunBest, None)?,
            };
            let report = fit_rate(&records, f_inf, tail, omega)?;
            say!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?);
            Ok(())
        }
        Command::Plot { files, kind, f_inf, title, out } => {
            let kind: PlotKind = kind.parse()?;
            let label = |p: &Path| {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                match p.parent().and_then(Path::file_name) {
                    Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
                    None => stem,
                }
            };
            let series = match kind {
                PlotKind::Trajectory2D => files
                    .iter()
                    .map(|f| Ok(PlotSeries::trajectory(&label(f), &load_trajectory(f)?)))
                    .collect::<CliResult<Vec<_>>>()?,
                PlotKind::ValueVsIter | PlotKind::LogLogGap => {
                    let traces = files.iter().map(|f| load_trace(f)).collect::<Result<Vec<_>, _>>()?;
                    if kind == PlotKind::ValueVsIter {
                        files.iter().zip(&traces).map(|(f, t)| PlotSeries::value_vs_iter(&label(f), t)).collect()
                    } else {
                        let f_inf = match parse_f_inf(&f_inf)? {
                            Some(v) => v,
                            None => {
                                let all: Vec<_> = traces.iter().flatten().copied().collect();
                                estimate_f_infinity(&all, FInfinityMethod::LongRunBest, None)?
                            }
                        };
                        files.iter().zip(&traces).map(|(f, t)| PlotSeries::log_gap(&label(f), t, f_inf)).collect()
                    }
                }
            };
            let title = title.unwrap_or_else(|| "hessbar".into());
            write_atomic(&out, emit_plot(&series, kind, &title)?.as_bytes())?;
            say!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(CliError::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
