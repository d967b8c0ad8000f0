//! Experiment harness: JSON configs, derived constants, runs with
//! replications, bound checks and rate fits.

pub mod bounds;
pub mod build;
pub mod config;
pub mod diagnostics;
pub mod rates;
pub mod reference;
pub mod run;

pub use bounds::{check_bounds, check_bounds_for, BoundReport};
pub use build::{build_model, DerivedConstants, Experiment};
pub use config::ExperimentConfig;
pub use diagnostics::{elbo_gap, GapEstimate};
pub use rates::{fit_rate, fit_rate_summaries, RateFit, RateMetric, RatePoint};
pub use run::{run_experiment, run_prepared, Summary};
