//! Experiment configuration, Monte Carlo campaigns over noise levels and
//! modes, and result files.

mod campaign;
mod config;
mod output;

pub use campaign::{
    geometry_bound, run_campaign, sample_sensor, summarize, SummaryRow, TrialRecord, TrialStatus,
    SAMPLING_ATTEMPTS,
};
pub use config::{read_config, ExperimentConfig};
pub use output::{
    read_records, read_results, write_records, write_results, write_summary, RECORD_HEADER,
    SUMMARY_HEADER, TIMING_COLUMNS,
};
