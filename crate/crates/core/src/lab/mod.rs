//! Experiment orchestration: kernel density estimates with bootstrap bands,
//! Gaussian bound fitting, configuration files and reports.

mod bounds;
mod config;
mod experiment;
mod kde;
mod report;

pub use bounds::{check_lower_bound, check_upper_bound, fit_lower_bound, fit_upper_bound, BoundCheck, BoundFit, GaussianShape, LogGrid};
pub use config::{DriverKind, ExperimentConfig, NumericsSection, OutputFormat, OutputSection, ProblemSection};
pub use experiment::{
    run_experiment, simulate_fbm, simulate_paths, simulate_terminal, write_artifacts, ExperimentOutcome, MAX_VIOLATION_FRACTION,
    MIN_SANDWICH_FRACTION,
};
pub use kde::{kde_estimate, silverman_bandwidth, Axis, DensityGrid, KdeConfig, KdeEstimate, MIN_KDE_SAMPLES};
pub use report::{BoundReport, Margin, REPORT_VERSION};
