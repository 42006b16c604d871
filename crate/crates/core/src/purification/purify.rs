use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LinearMap, Tape, Tensor, Var};
use crate::diffusion::{
    corrector_step_size, forward_diffuse_with, FrozenNoise, RecordingNoise, pc_sample_dc, sample_on_tape, BoundScore, NoiseSource, SamplerConfig, SamplerInit,
    ScoreModel, TapeDc,
};
use crate::error::{invalid, Result};
use crate::forward_model::{ForwardOperator, KSpaceMeasurements};
use crate::numerics::{ComplexImage, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifyConfig {
    /// Switching step `N_t*`: how far the input is diffused before the
    /// reverse chain brings it back to step 0.
    pub pst_step: usize,
    pub sampler: SamplerConfig,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self { pst_step: 150, sampler: SamplerConfig::default() }
    }
}

fn check(score: &ScoreModel, cfg: &PurifyConfig) -> Result<()> {
    if cfg.pst_step >= score.schedule.len() {
        return invalid(format!(
            "switching step {} outside schedule of length {}",
            cfg.pst_step,
            score.schedule.len()
        ));
    }
    Ok(())
}

/// Diffusion purification: diffuse `A^H y_pert` to the switching step, then
/// run the reverse sampler back to step 0 with data consistency against
/// `y_pert`.
pub fn purify(
    score: &ScoreModel,
    y_pert: &KSpaceMeasurements,
    op: &Arc<ForwardOperator>,
    cfg: &PurifyConfig,
    noise: &mut dyn NoiseSource,
) -> Result<ComplexImage> {
    purify_with_dc_target(score, y_pert, y_pert, op, cfg, noise)
}

/// [`purify`] with a separate measurement set for the data-consistency
/// steps (for ablations that anchor the sampler to clean data).
pub fn purify_with_dc_target(
    score: &ScoreModel,
    y_pert: &KSpaceMeasurements,
    dc_target: &KSpaceMeasurements,
    op: &Arc<ForwardOperator>,
    cfg: &PurifyConfig,
    noise: &mut dyn NoiseSource,
) -> Result<ComplexImage> {
    check(score, cfg)?;
    let x = op.adjoint(y_pert)?;
    if cfg.pst_step == 0 {
        return Ok(x);
    }
    let z = forward_diffuse_with(&x, 0, cfg.pst_step, &score.schedule, noise)?;
    pc_sample_dc(score, Some((op, dc_target)), cfg.pst_step, 0, &cfg.sampler, noise, SamplerInit::From(z))
}

/// Purification recorded on a tape, with `y_pert` a tape variable so that
/// gradients reach the measurement perturbation.
pub fn purify_on_tape(
    tape: &mut Tape,
    score: &BoundScore<'_>,
    op: &Arc<ForwardOperator>,
    y_pert: Var,
    cfg: &PurifyConfig,
    noise: &mut dyn NoiseSource,
) -> Result<Var> {
    check(score.model(), cfg)?;
    let sched = score.model().schedule;
    let x = tape.linear(y_pert, LinearMap::Adjoint(op.clone()))?;
    if cfg.pst_step == 0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let std = sched.variance_between(0, cfg.pst_step).sqrt();
    let eta = noise.draw(shape[1], shape[2], std)?;
    let e = tape.constant(Tensor::from_image(&eta))?;
    let z = tape.add(x, e)?;
    let dc = TapeDc { op: op.clone(), y: y_pert };
    sample_on_tape(tape, score, Some(&dc), &sched, cfg.pst_step, 0, &cfg.sampler, z, noise)
}

/// Draws, in consumption order, every noise image that purification with
/// `cfg` will request, so the same realisation can be replayed.
pub fn freeze_purification_noise(
    score: &ScoreModel,
    cfg: &PurifyConfig,
    height: usize,
    width: usize,
    stream: &mut RngStream,
) -> Result<FrozenNoise> {
    check(score, cfg)?;
    let sched = score.schedule;
    let mut rec = RecordingNoise::new(stream);
    if cfg.pst_step > 0 {
        rec.draw(height, width, sched.variance_between(0, cfg.pst_step).sqrt())?;
    }
    for i in (0..cfg.pst_step).rev() {
        rec.draw(height, width, sched.variance_between(i, i + 1).sqrt())?;
        let eps = corrector_step_size(sched.sigma(i), cfg.sampler.snr);
        for _ in 0..cfg.sampler.m_r {
            rec.draw(height, width, (2.0 * eps).sqrt())?;
        }
    }
    Ok(rec.into_frozen())
}
