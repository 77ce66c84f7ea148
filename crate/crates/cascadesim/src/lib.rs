//! File formats, experiment configuration, CSV logs, plots and the runner
//! for the `cascadesim_core` simulator.

pub mod config;
pub mod output;
pub mod plot;
pub mod profile_file;
pub mod runner;
pub mod trace_file;

pub use config::ExperimentConfig;
pub use runner::{run, simulate, sweep, Axis, RunReport, SweepPoint};
