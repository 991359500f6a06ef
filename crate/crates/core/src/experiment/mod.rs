//! Configured runs: training, evaluation, gradient checks and inspection.

pub mod config;
pub mod gradcheck;
pub mod inspect;
pub mod metrics;
pub mod train;

pub use config::{
    DataConfig, ExperimentConfig, OptimizerKind, OutputConfig, TrainConfig, DATA_ROOT_ENV,
};
pub use gradcheck::{run_gradcheck, CheckLine, Fault, GradcheckOptions, GradcheckReport};
pub use inspect::{circuit_dump, inspect, params_table, REFERENCE_TOTALS_NOTE};
pub use metrics::{metrics_to_csv, read_metrics, MetricsRecord, MetricsWriter};
pub use train::{
    evaluate, evaluate_checkpoint, initial_model, load_data, summary_table, train, train_on,
    SplitData, TrainOutcome,
};
