//! Experiment drivers, metrics, and figures.

mod config;
mod experiments;
mod learners;
mod metrics;
mod plots;

pub use config::{CompgenConfig, ExperimentConfig, TransferConfig, DEFAULT_ORDERS};
pub use experiments::{
    epoch_accuracy, eval_trials, order_tag, run_compgen, run_continual, run_continual_single, run_taskmodel,
    run_transfer_backward, run_transfer_forward, steps_to_loss, LearnerKind, RunOutput, Session, COMPGEN_REFERENCE,
    REFERENCE_PATHS, TASKMODEL_EVAL_EVERY,
};
pub use learners::{BaselineLearner, ContextLearner, ContinualLearner, EvalSummary};
pub use metrics::{MetricRow, MetricsLog, COLUMNS, SCHEMA_LINE};
pub use plots::{emit_figure, emit_plots, Figure};
