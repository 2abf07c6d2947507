//! Metrics, experiment orchestration and synthetic evaluation suites.

mod config;
mod experiment;
mod metrics;
mod synthetic;

pub use config::{ExperimentConfig, LmSpec};
pub use experiment::{
    lambda_bin, line_items, run_experiment, sweep, sweep_csv, EvalReport, Experiment, LineItem, ModeReport, Settings,
    SweepAxis, LAMBDA_BINS,
};
pub use metrics::{edit_similarity, exact_match, levenshtein, token_accuracy};
pub use synthetic::{generate as generate_shift_suite, ShiftSuite, ShiftSuiteConfig};
