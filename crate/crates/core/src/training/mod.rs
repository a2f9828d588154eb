//! Losses, the discriminator, Adam, and the training loops.

mod adam;
mod disc;
mod eval;
mod loss;
mod train;

pub use adam::{Adam, AdamConfig};
pub use disc::{build_discriminator, disc_forward, DISC_LEVELS};
pub use eval::{evaluate_dataset, super_resolve, HoldoutReport};
pub use loss::{
    adversarial_losses, bce_mean, discriminator_loss, generator_adv_loss, perceptual_loss, pixel_loss, total_loss,
    LossParts, LossWeights, PerceptualProxy, PERCEPTUAL_SEED, PERCEPTUAL_WIDTHS,
};
pub use train::{
    checkpoint_name, discriminator_step, train, train_gan, BatchPlan, GanStepRecord, RunOutput, StepRecord,
    TrainConfig, TrainSummary, FINAL_CHECKPOINT,
};
