//! Experiment orchestration: configuration, replicate sweeps, aggregation,
//! CSV and SVG output, and the command-line driver.

pub mod cli;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use config::{parse_config, parse_config_with_env, ExperimentConfig, ScheduleId, ShiftModeKind, ShiftSetting, DATA_DIR_ENV};
pub use metrics::{
    aggregate, fmt_float, mean_sem, read_aggregate_csv, write_aggregate_csv, write_csv, AggregateRow, MetricsRow,
};
pub use plot::{parse_plot_spec, render_plot, Metric, PlotSpec, SeriesKey};
pub use run::{cells, replicate_seed, run_experiment, run_replicate, Experiment, ExperimentData, ReplicateResult};
