//! Training, evaluation and checkpointing.

mod checkpoint;
mod config;
mod data;
mod eval;
mod optimizer;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::TrainConfig;
pub use data::{epoch_permutation, eval_batch, load_samples, train_batch, train_chunks, Sample};
pub use eval::{
    argmax, confusion_of, evaluate, format_predictions, read_predictions, write_predictions,
    Evaluation, Prediction,
};
pub use optimizer::{momentum_update, sgd_momentum_step, OptimizerState};
pub use run::{
    epoch_checkpoint_name, render_log, train, train_samples, EpochRecord, TrainOutcome,
    BEST_CHECKPOINT, FINAL_CHECKPOINT, LOG_FILE,
};
