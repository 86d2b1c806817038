//! Experiment recipes, run outputs and the parameter-sweep harness for the
//! Zakharov–Kuznetsov solitary-wave laboratory.

pub mod error;
pub mod lab;
pub mod manifest;
pub mod recipes;
pub mod run;
pub mod spec;
pub mod studies;
pub mod sweep;

pub use error::{ExperimentError, Result};
pub use lab::Lab;
pub use manifest::RunManifest;
pub use run::{run_evolution, RunResult, RunSummary};
pub use spec::ExperimentSpec;
pub use sweep::run_sweep;
