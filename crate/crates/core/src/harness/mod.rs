//! Experiment orchestration: configuration, seeded runs and result files.

mod config;
mod report;
mod runner;

pub use config::{ExperimentConfig, OUTPUT_ROOT_ENV};
pub use report::{
    compare, comparison_header, load_traces, record_at_budget, report, report_file_name, seed_average, ReportRow,
    TraceSet, COMPARISON_FILE, COMPARISON_POINTS,
};
pub use runner::{
    final_models, run_experiment, simulate, simulate_with, to_csv, to_jsonl, trace_file_name, write_atomic,
    ExperimentOutput, RoundRecord, SummaryRow, World, SUMMARY_FILE,
};
