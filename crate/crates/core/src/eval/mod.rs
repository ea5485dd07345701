//! Overlap, consistency and topology metrics, and the repeated-perturbation
//! registration experiment.

mod experiment;
mod labels;
mod metrics;

pub use experiment::{run_registration_experiment, DiceStats, EvalPair, EvalReport, RepeatRecord};
pub use labels::{dice, spatial_dims, warp_labels, LabelVolume};
pub use metrics::{folding_fraction, inverse_consistency_error, Consistency};
