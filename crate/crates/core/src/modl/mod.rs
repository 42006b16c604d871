//! Unrolled MoDL reconstruction, supervised training, fine-tuning on
//! purified inputs, adversarial training and randomized smoothing.

mod recon;
mod train;

pub use recon::{
    measurement_tensor, measurements_from_tensor, modl_on_tape, reconstruct, reconstruct_on_tape,
    reconstruct_purified, rs_reconstruct, ModlConfig, TrainingSet,
};
pub use train::{
    anchored_loss, at_train, fine_tune, measurement_loss, purified_anchors, train, TrainOptions, TrainOutcome,
};
