//! Experiment orchestration: single fits with function curves, convergence
//! studies over horizons, robustness grids over network shapes and the
//! order-book fitting pipeline. Every study writes `results.csv`,
//! `aggregate.csv` and `run.json` (with the config hash) into its output
//! directory.

mod config;
mod lob_fit;
mod single;
mod study;

pub use config::{ExperimentConfig, ExperimentKind, ModelChoice};
pub use lob_fit::{
    lob_curve_points, lob_table_error, run_lob_fit, LobFit, LobFitConfig, LobSource, LOB_CELLS, LOB_CURVE_POINTS,
    LOB_EMPIRICAL_BINS,
};
pub use single::{panel_points, run_single_fit, write_function_curves, SingleFit, CURVE_POINTS, PANEL_LEVELS};
pub use study::{
    aggregate_rows, evaluate_fit, evaluation_setup, fit_slopes, ols, run_convergence_study, run_robustness_grid,
    run_study, thread_pool, AggregateRow, Evaluation, FailureRecord, LineFit, Measure, SlopeFit, StudyResult,
    MAX_FAILURE_FRACTION,
};
