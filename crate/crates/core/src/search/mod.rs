//! Random hyperparameter search: sampling, resumable trial runs, and the
//! correlation and best-configuration reports.

mod analysis;
mod space;
mod trials;

pub use analysis::{
    correlation_matrix, parse_top, pearson_matrix, top_k, top_to_csv, CorrelationMatrix, TopRow,
    CORRELATION_LABELS, TOP_COLUMNS,
};
pub use space::{sample_config, SearchSpace, SPACE_KEYS};
pub use trials::{
    load_results, parse_results, results_header, results_to_csv, run_trial, run_trials, write_results,
    TrialPlan, TrialResult, TrialStatus, CONFIG_COLUMNS,
};
