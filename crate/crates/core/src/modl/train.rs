use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::recon::{measurement_tensor, modl_on_tape, reconstruct_on_tape, ModlConfig, TrainingSet};
use crate::autodiff::{
    adam_step, batch_gradients, clip_grad_norm, param_grads, AdamConfig, AdamState, NetworkParams, Tape, Tensor,
};
use crate::diffusion::ScoreModel;
use crate::error::{invalid, Error, Result};
use crate::forward_model::{ForwardOperator, KSpaceMeasurements};
use crate::numerics::{ComplexImage, RngStream};
use crate::perturbations::{pgd_attack, AttackConfig};
use crate::purification::{purify, PurifyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 8, adam: AdamConfig::default(), clip_norm: Some(1.0) }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

fn image_loss(tape: &mut Tape, out: crate::autodiff::Var, x: &ComplexImage) -> Result<crate::autodiff::Var> {
    let target = tape.constant(Tensor::from_image(x))?;
    let d = tape.squared_distance(out, target)?;
    tape.scale(d, 1.0 / x.len() as f64)
}

/// `||MoDL(y) - x||^2 / pixels` and its parameter gradient.
pub fn measurement_loss(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    x: &ComplexImage,
    cfg: &ModlConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true)?;
    let yv = tape.constant(measurement_tensor(y))?;
    let out = reconstruct_on_tape(&mut tape, &p, op, yv, cfg)?;
    let loss = image_loss(&mut tape, out, x)?;
    let value = tape.value(loss).item();
    let g = tape.backward(loss, Tensor::scalar(1.0))?;
    Ok((value, param_grads(&g, &tape, &p)))
}

/// Loss of the unroll anchored at a purified image.
pub fn anchored_loss(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    anchor: &ComplexImage,
    x: &ComplexImage,
    cfg: &ModlConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true)?;
    let a = tape.constant(Tensor::from_image(anchor))?;
    let out = modl_on_tape(&mut tape, &p, op, a, cfg)?;
    let loss = image_loss(&mut tape, out, x)?;
    let value = tape.value(loss).item();
    let g = tape.backward(loss, Tensor::scalar(1.0))?;
    Ok((value, param_grads(&g, &tape, &p)))
}

fn diverged(e: Error) -> Error {
    match e {
        Error::Numerical(m) => Error::Diverged(m),
        other => other,
    }
}

/// Generic minibatch Adam loop. `epoch_loss` is called once per epoch
/// (before shuffling) and returns the per-example loss for that epoch.
fn fit<L>(
    init: NetworkParams,
    n: usize,
    opts: &TrainOptions,
    stream: &mut RngStream,
    label: &str,
    mut epoch_loss: impl FnMut(usize, &NetworkParams) -> Result<L>,
) -> Result<TrainOutcome>
where
    L: Fn(&NetworkParams, usize) -> Result<(f64, Vec<Tensor>)> + Sync,
{
    if n == 0 {
        return invalid("training set is empty");
    }
    if opts.batch_size == 0 {
        return invalid("batch_size must be positive");
    }
    let mut params = init;
    let mut opt = AdamState::new(&params, opts.adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let loss_fn = epoch_loss(epoch, &params).map_err(diverged)?;
        stream.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let (loss, mut grads) =
                batch_gradients(batch.len(), |b| loss_fn(&params, batch[b])).map_err(diverged)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("{label} loss became {loss} in epoch {epoch}")));
            }
            if let Some(c) = opts.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut opt)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / n as f64;
        info!("{label} epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok(TrainOutcome { params, losses })
}

/// Supervised end-to-end training through all unrolls.
pub fn train(
    init: NetworkParams,
    set: &TrainingSet,
    cfg: &ModlConfig,
    opts: &TrainOptions,
    stream: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let op = set.op().clone();
    fit(init, set.len(), opts, stream, "modl", |_, _| {
        let op = op.clone();
        Ok(move |p: &NetworkParams, k: usize| {
            let (x, y) = &set.pairs()[k];
            measurement_loss(p, &op, y, x, cfg)
        })
    })
}

/// Purified anchors `DP(y + v)` for every pair, with `v` complex Gaussian
/// of standard deviation `sigma_ft` per k-space entry. Pair `k` draws from
/// `stream.child(k)`.
pub fn purified_anchors(
    set: &TrainingSet,
    score: &ScoreModel,
    purify_cfg: &PurifyConfig,
    sigma_ft: f64,
    stream: &RngStream,
) -> Result<Vec<ComplexImage>> {
    if !(sigma_ft >= 0.0) {
        return invalid(format!("sigma_ft must be nonnegative, got {sigma_ft}"));
    }
    let op = set.op();
    set.pairs()
        .par_iter()
        .enumerate()
        .map(|(k, (_, y))| {
            let mut s = stream.child(k as u64);
            let data = y.data().iter().map(|v| v + s.complex_gaussian(sigma_ft)).collect();
            let noisy = y.with_data(data)?;
            purify(score, &noisy, op, purify_cfg, &mut s)
        })
        .collect()
}

/// Fine-tunes pretrained parameters on purified, noised examples; the
/// anchors are recomputed once per epoch from `stream.child(epoch)`.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    init: NetworkParams,
    set: &TrainingSet,
    score: &ScoreModel,
    purify_cfg: &PurifyConfig,
    sigma_ft: f64,
    cfg: &ModlConfig,
    opts: &TrainOptions,
    stream: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if purify_cfg.pst_step >= score.schedule.len() {
        return invalid("switching step outside the score schedule");
    }
    let op = set.op().clone();
    let base = stream.clone();
    fit(init, set.len(), opts, stream, "fine-tune", |epoch, _| {
        let anchors = purified_anchors(set, score, purify_cfg, sigma_ft, &base.child(epoch as u64))?;
        let op = op.clone();
        Ok(move |p: &NetworkParams, k: usize| anchored_loss(p, &op, &anchors[k], &set.pairs()[k].0, cfg))
    })
}

/// Adversarial training: each example is replaced by its PGD perturbation
/// against the current parameters before the descent step. The attack for
/// example `k` in epoch `e` uses `stream.child(e * n + k)`.
pub fn at_train(
    init: NetworkParams,
    set: &TrainingSet,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    opts: &TrainOptions,
    stream: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    attack.validate()?;
    let op = set.op().clone();
    let base = stream.clone();
    let n = set.len();
    fit(init, n, opts, stream, "adversarial", |epoch, _| {
        let op = op.clone();
        let base = base.clone();
        Ok(move |p: &NetworkParams, k: usize| {
            let (x, y) = &set.pairs()[k];
            let y_adv = if attack.epsilon == 0.0 {
                y.clone()
            } else {
                let mut s = base.child((epoch * n + k) as u64);
                let delta = pgd_attack(p, &op, y, cfg, attack, &mut s)?;
                delta.apply(y)?
            };
            measurement_loss(p, &op, &y_adv, x, cfg)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Architecture;
    use crate::diffusion::make_schedule;
    use crate::numerics::CgConfig;
    use crate::perturbations::AttackTarget;
    use crate::testutil::{random_image, small_op};
    use num_complex::Complex64;

    fn tiny() -> (TrainingSet, NetworkParams, ModlConfig) {
        let op = small_op(8, 8, 2, 2.0, 11);
        let images: Vec<_> = (0..4).map(|k| random_image(8, 8, 100 + k).scale(0.3)).collect();
        let set = TrainingSet::simulate(op, &images).unwrap();
        let arch = Architecture { channels: vec![2, 4, 2], ..Architecture::default_denoiser() };
        let params = NetworkParams::init(arch, &mut RngStream::new(3, 0)).unwrap();
        let cfg = ModlConfig { unroll_steps: 2, lambda: 1.0, cg: CgConfig { tol: 1e-8, max_iter: 50 } };
        (set, params, cfg)
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let (set, params, cfg) = tiny();
        let opts = TrainOptions { epochs: 8, batch_size: 2, adam: AdamConfig { lr: 5e-3, ..Default::default() }, clip_norm: None };
        let a = train(params.clone(), &set, &cfg, &opts, &mut RngStream::new(1, 0)).unwrap();
        let b = train(params, &set, &cfg, &opts, &mut RngStream::new(1, 0)).unwrap();
        assert!(a.losses.last().unwrap() < a.losses.first().unwrap(), "{:?}", a.losses);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn adversarial_training_with_zero_budget_is_plain_training() {
        let (set, params, cfg) = tiny();
        let opts = TrainOptions { epochs: 2, batch_size: 2, ..Default::default() };
        let attack = AttackConfig { epsilon: 0.0, steps: 2, ..Default::default() };
        let a = at_train(params.clone(), &set, &cfg, &attack, &opts, &mut RngStream::new(4, 0)).unwrap();
        let b = train(params, &set, &cfg, &opts, &mut RngStream::new(4, 0)).unwrap();
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn adversarial_training_runs_with_budget() {
        let (set, params, cfg) = tiny();
        let opts = TrainOptions { epochs: 1, batch_size: 4, ..Default::default() };
        let attack = AttackConfig { epsilon: 0.01, steps: 2, target: AttackTarget::ModlOnly, ..Default::default() };
        let out = at_train(params, &set, &cfg, &attack, &opts, &mut RngStream::new(4, 0)).unwrap();
        assert!(out.losses[0].is_finite());
    }

    #[test]
    fn fine_tuning_with_zero_switching_step_anchors_at_adjoint() {
        let (set, params, cfg) = tiny();
        let sched = make_schedule(0.01, 2.0, 10).unwrap();
        let score = ScoreModel::gaussian(Complex64::new(0.0, 0.0), 1.0, sched).unwrap();
        let pcfg = PurifyConfig { pst_step: 0, ..Default::default() };
        let anchors = purified_anchors(&set, &score, &pcfg, 0.0, &RngStream::new(0, 0)).unwrap();
        for ((_, y), a) in set.pairs().iter().zip(&anchors) {
            assert_eq!(&set.op().adjoint(y).unwrap(), a);
        }
        let opts = TrainOptions { epochs: 2, batch_size: 2, ..Default::default() };
        let pcfg = PurifyConfig { pst_step: 3, ..Default::default() };
        let out = fine_tune(params, &set, &score, &pcfg, 0.01, &cfg, &opts, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(out.losses.len(), 2);
        assert!(out.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn empty_set_is_rejected() {
        let (set, params, cfg) = tiny();
        let empty = TrainingSet::new(set.op().clone(), vec![]).unwrap();
        assert!(train(params, &empty, &cfg, &TrainOptions::default(), &mut RngStream::new(0, 0)).is_err());
    }
}
