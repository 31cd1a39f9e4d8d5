//! Experiment orchestration: configuration, single runs, seed sweeps and
//! their CSV output.

mod config;
mod sweep;
mod traces;
mod world;

pub use config::{parse_scalar, RunConfig, Transport};
pub use sweep::{
    ci95_half_width, emit_plots, mean, plot_points, read_csv, read_runs_csv, run_sweep, summarize,
    write_csv, write_csv_to, write_runs_csv, write_sweep, Cell, CellFailure, ConfigSummary, PairedGain,
    PlotPoint, RunRow, SweepGrid, SweepOutcome, SweepSummary,
};
pub use traces::write_traces;
pub use world::{run_one, run_traced, RanSample, RunMetrics, RunTraces};
