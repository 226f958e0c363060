//! Optimizer, training loop, evaluation and experiment drivers.

pub mod config;
pub mod evaluate;
pub mod experiments;
pub mod optim;
pub mod trainer;

pub use config::{DataSource, Preprocess, TrainConfig};
pub use evaluate::{binarize_map, evaluate_samples, optimum_from_samples, predict_map, EvalOptions, InferenceSettings};
pub use experiments::{ablate, ablation_csv, cross_evaluate, cross_train, AblationRow, CrossReport, ABLATION_HEADER};
pub use optim::{adam_step, Adam, AdamConfig};
pub use trainer::{
    evaluation_loss, fit, prepare_data, run_metadata, train, write_run, EpochRecord, PreparedData, RunRecord,
    SelectionSet, TrainOutcome, CHECKPOINT_FILE,
};
