//! Config-driven experiments: single runs, grid sweeps over corruption and
//! rectification settings, and long-format reporting.

mod config;
mod report;
mod run;
mod sweep;

pub use config::{DataConfig, DataSource, EditConfig, ExperimentConfig, MrConfig};
pub use report::{find_bundles, report, LongRow, Report};
pub use run::{prepare, run_experiment, Bundle, Encoder, Outcome, Prepared, Runner};
pub use sweep::{
    cell_config, format_value, mean_sd, sweep, sweep_with, SummaryRow, SweepAxis, SweepCell, SweepTable, Variant,
    DEFAULT_ETA_E_GRID, DEFAULT_ETA_M_GRID, DEFAULT_LAMBDA_GRID,
};
