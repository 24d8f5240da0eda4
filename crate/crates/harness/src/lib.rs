//! Experiment harness for the deep 2BSDE solver: configuration, repeated
//! seeded training runs, result files and reference-value checks.

pub mod aggregate;
pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod gradients;
pub mod output;
pub mod refs;

pub use aggregate::{aggregate, AggregateRow, Moments, RunRecord};
pub use config::RunConfig;
pub use experiment::{run_experiment, Bundle, Manifest, Options};
