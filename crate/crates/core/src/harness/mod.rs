//! Experiment orchestration behind the `fidec` command line.

pub mod config;
pub mod experiments;
pub mod export;
pub mod report;
pub mod validation;

pub use config::{parse_key_values, parse_override, DataSpec, RunConfig};
pub use experiments::{
    ablate_metric, load_dataset, pretrained_behavior, report_row, run_train, sweep_teps, train_seed, AblationReport,
    Checkpoint, PairedDelta, DEFAULT_TEPS_GRID,
};
pub use export::{export_plots, ExportSpec, ExportSummary};
pub use report::{aggregate, aggregate_table, rows_from_csv, rows_to_csv, Aggregate, MeanStd, ReportRow};
pub use validation::{log_log_slope, run_suites, suite_names, SuiteResult};
