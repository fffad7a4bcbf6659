//! Loss, optimizer and training loop.

mod adam;
mod engine;
pub(crate) mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use engine::{
    evaluate, train, train_with, EpochRecord, Evaluation, RunReport, TrainConfig, TrainOutcome, DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
};
pub use loss::{batch_loss, bce_image};
