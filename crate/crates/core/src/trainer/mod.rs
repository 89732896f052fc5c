//! Minibatch adversarial training with scheduled penalties and truncation.

mod adam;
mod losses;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{discriminator_loss, generator_loss, interpolate, CriticLoss, GeneratorLoss};
pub use train::{
    train, write_training_log, LogRecord, TrainConfig, TrainedModel, Trainer, TruncationPolicy,
    LOG_HEADER,
};
