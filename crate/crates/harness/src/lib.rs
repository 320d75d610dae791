//! Command-line driver, experiment grids, reward probes and SVG learning curves
//! over `lamp_core`.

pub mod artifacts;
pub mod cli;
pub mod grid;
pub mod plot;
pub mod probe;

pub use grid::{median, run_grid, ExperimentGrid, GridReport, Method, RunRecord, RunSpec};
pub use probe::{probe_rewards, ProbeReport, ProbeSpec};
