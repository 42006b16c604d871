use log::info;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::score::ScoreModel;
use crate::autodiff::{
    adam_step, batch_gradients, clip_grad_norm, param_grads, score_forward, AdamConfig, AdamState, NetworkParams,
    Tape, Tensor,
};
use crate::error::{invalid, Error, Result};
use crate::numerics::{gaussian_image, ComplexImage, RngStream};

/// Which sign the denoising target carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSign {
    /// `sigma * s ≈ -(z_t - z) / sigma`, the score of the smoothed density.
    #[default]
    Standard,
    /// `sigma * s ≈ +(z_t - z) / sigma`, the negated score.
    AsPrinted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Largest schedule index drawn during training (defaults to the top).
    pub max_step: Option<usize>,
    pub sign: ScoreSign,
    pub clip_norm: Option<f64>,
    /// Cosine-anneal the learning rate to zero over the run.
    pub cosine_decay: bool,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
            max_step: None,
            sign: ScoreSign::Standard,
            clip_norm: Some(10.0),
            cosine_decay: false,
        }
    }
}

pub struct ScoreTrainOutcome {
    pub model: ScoreModel,
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
}

/// Per-example denoising score-matching loss `||sigma s(z + sigma eta) -
/// target||^2 / pixels` and its parameter gradient.
pub fn dsm_loss(
    params: &NetworkParams,
    image: &ComplexImage,
    sigma: f64,
    eta: &ComplexImage,
    sign: ScoreSign,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true)?;
    let zt = image.axpy(sigma, eta);
    let zv = tape.constant(Tensor::from_image(&zt))?;
    let s = score_forward(&mut tape, &p, zv, sigma)?;
    let ss = tape.scale(s, sigma)?;
    let target = match sign {
        ScoreSign::Standard => Tensor::from_image(eta).scale(-1.0),
        ScoreSign::AsPrinted => Tensor::from_image(eta),
    };
    let tv = tape.constant(target)?;
    let d = tape.squared_distance(ss, tv)?;
    let loss = tape.scale(d, 1.0 / image.len() as f64)?;
    let value = tape.value(loss).item();
    let g = tape.backward(loss, Tensor::scalar(1.0))?;
    Ok((value, param_grads(&g, &tape, &p)))
}

/// Denoising score matching with Adam over uniformly drawn noise levels
/// `i in 1..=max_step`.
pub fn train_score(
    init: NetworkParams,
    images: &[ComplexImage],
    sched: &NoiseSchedule,
    cfg: &ScoreTrainConfig,
    stream: &mut RngStream,
) -> Result<ScoreTrainOutcome> {
    if images.is_empty() {
        return invalid("score training needs at least one image");
    }
    let max_step = cfg.max_step.unwrap_or(sched.len() - 1).min(sched.len() - 1);
    if max_step == 0 || cfg.batch_size == 0 {
        return invalid("max_step and batch_size must be positive");
    }
    let mut params = init;
    let mut opt = AdamState::new(&params, cfg.adam);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * images.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        stream.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let draws: Vec<(f64, ComplexImage)> = batch
                .iter()
                .map(|&k| {
                    let i = 1 + stream.below(max_step);
                    let img = &images[k];
                    gaussian_image(stream, img.height(), img.width(), 1.0).map(|eta| (sched.sigma(i), eta))
                })
                .collect::<Result<_>>()?;
            let (loss, mut grads) = batch_gradients(batch.len(), |b| {
                let (sigma, eta) = &draws[b];
                dsm_loss(&params, &images[batch[b]], *sigma, eta, cfg.sign)
            })
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Diverged(m),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("score loss became {loss} in epoch {epoch}")));
            }
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            if cfg.cosine_decay {
                let progress = step as f64 / total_steps as f64;
                opt.config.lr = cfg.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            step += 1;
            adam_step(&mut params, &grads, &mut opt)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / images.len() as f64;
        info!("score epoch {epoch}: loss {mean:.5}");
        losses.push(mean);
    }
    Ok(ScoreTrainOutcome { model: ScoreModel::learned(params, *sched)?, losses })
}
