//! Experiment harness: traces, rate fits, plots and benchmark batches.

pub mod experiment;
pub mod plot;
pub mod rate;
pub mod suite;
pub mod trace;

pub use experiment::{
    run_experiment, BaselineConfig, ExperimentConfig, ExperimentOutcome, ExperimentSummary, FInfinityKeyword,
    FInfinitySetting, ProblemSource, RunSummary,
};
pub use plot::{emit_plot, PlotKind, PlotSeries};
pub use rate::{check_rate_bound, estimate_f_infinity, fit_rate, predicted_rho, FInfinityMethod, RateCompliance, RateReport};
pub use suite::{run_batch, run_suite, Suite, SuiteSummary};
pub use trace::{load_trace, load_trajectory, read_trace, trace_to_csv, write_atomic, write_trace};
