//! Adversarial training with synthesis, similarity, inverse-consistency,
//! smoothness and latent objectives.

mod checkpoint;
mod config;
mod fit;
mod losses;
mod step;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{LossWeights, TrainConfig};
pub use fit::{fit, fit_with, perturb_pair, LogEntry, TrainingLog, TrainingPair};
pub use losses::{
    discriminator_loss, field_roughness, generator_adversarial_loss, inverse_consistency_loss, l1,
    latent_consistency_loss, mean_sq_to, similarity_loss, smoothness_loss, AdversarialTerm, CriticInputs,
    InverseConsistencyTerm, LatentTerm, LossContext, LossRegistry, LossTerm, SimilarityTerm, SmoothnessTerm,
};
pub use step::{
    discriminator_phase, generator_phase, train_step, CriticImages, GeneratorPass, Optimizers, StepReport,
    REPORT_KEYS,
};
