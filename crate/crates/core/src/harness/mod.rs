//! Configuration, experiment commands and result files.

mod commands;
mod config;
mod evaluate;
mod presets;
mod results;

pub use commands::{
    cmd_baseline, cmd_eval, cmd_misspec, cmd_plotdata, cmd_tabular, cmd_train, content_hash, eval_estimator,
    iterations_to_reach, load_estimator, run_baseline, run_tabular, tabular_curves, ArmResult, EvalOutcome, FoldResult,
    MisspecOutcome, TabularOutcome, TrainOutcome, SWITCHED_ROW,
};
pub use config::{parse_source, EvalConfig, ExperimentConfig, MisspecConfig, TabularConfig, DISTRIBUTION_METRICS};
pub use evaluate::{cases_hash, evaluate_sampler, test_cases};
pub use presets::{preset, preset_names};
pub use results::{
    emit_plotdata, plot_rows, read_jsonl, read_plotdata, write_jsonl, write_summary_csv, PlotRow, ResultLine, RunRecord,
    PLOT_HEADER,
};
