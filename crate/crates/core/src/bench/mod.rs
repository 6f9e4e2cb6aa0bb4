//! Experiment orchestration: configs, the grid runner, significance testing
//! and the comparison table.

pub mod config;
pub mod experiment;
pub mod summary;
pub mod wilcoxon;

pub use config::{ExperimentConfig, PreparedData, OUT_DIR_ENV};
pub use experiment::{
    read_results, run_experiment, run_experiment_on, run_single, upsert_results, ResultRecord,
    RunOutcome, RunStatus, RESULTS_FILE,
};
pub use summary::{render_csv, render_text, summarize, MeanStd, SummaryRow};
pub use wilcoxon::{wilcoxon_enumerate, wilcoxon_signed_rank, WilcoxonResult};
