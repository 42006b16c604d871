//! Variance-exploding diffusion: geometric noise schedule, forward
//! diffusion, score models (learned and analytic), denoising score
//! matching, and predictor-corrector sampling with data consistency.

mod sampler;
mod schedule;
mod score;
mod train;

pub use sampler::{
    corrector_step_size, pc_sample_dc, reverse_step_on_tape, sample_on_tape, FrozenNoise, NoiseSource,
    RecordingNoise, SamplerConfig, SamplerInit, TapeDc,
};
pub use schedule::{forward_diffuse, forward_diffuse_with, make_schedule, NoiseSchedule};
pub use score::{analytic_score, BoundScore, ComplexMixture, ScoreFlavor, ScoreModel};
pub use train::{dsm_loss, train_score, ScoreSign, ScoreTrainConfig, ScoreTrainOutcome};
