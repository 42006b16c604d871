use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NetworkParams, Tape, Tensor};
use crate::diffusion::ScoreModel;
use crate::error::{invalid, Error, Result};
use crate::forward_model::{ForwardOperator, KSpaceMeasurements};
use crate::modl::{measurement_tensor, modl_on_tape, reconstruct, reconstruct_on_tape, ModlConfig};
use crate::numerics::{ComplexImage, RngStream};
use crate::purification::{freeze_purification_noise, purify_on_tape, PurifyConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    #[default]
    ModlOnly,
    EndToEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// l-infinity budget per real and imaginary component.
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `2.5 * epsilon / steps`.
    pub step_size: Option<f64>,
    /// Gradient momentum decay of the momentum variant.
    pub momentum: f64,
    /// Halve the step at `ceil(K/2)` and `ceil(3K/4)` completed steps
    /// (momentum variant).
    pub halving: bool,
    pub random_init: bool,
    /// Reject any step that lowers the loss and halve the step size
    /// instead, so the accepted losses never decrease.
    pub monotone: bool,
    pub target: AttackTarget,
    /// Cap on recorded tape memory for end-to-end attacks, in bytes.
    pub memory_cap: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.004,
            steps: 30,
            step_size: None,
            momentum: 0.75,
            halving: true,
            random_init: true,
            monotone: false,
            target: AttackTarget::ModlOnly,
            memory_cap: Some(3 << 30),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return invalid(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if self.steps == 0 {
            return invalid("attack needs at least one step");
        }
        if let Some(a) = self.step_size {
            if !(a > 0.0) {
                return invalid(format!("step size must be positive, got {a}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum decay must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }
}

/// Loss bookkeeping of one attack run.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackTrace {
    /// Loss at the initial point, then after each step.
    pub losses: Vec<f64>,
    pub best_loss: f64,
    pub best_step: usize,
}

/// An additive k-space perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub delta: KSpaceMeasurements,
    /// Budget the perturbation was generated under (infinite for random
    /// noise).
    pub epsilon: f64,
    pub trace: Option<AttackTrace>,
}

impl Perturbation {
    pub fn apply(&self, y: &KSpaceMeasurements) -> Result<KSpaceMeasurements> {
        y.add(&self.delta)
    }

    /// Largest absolute real or imaginary component.
    pub fn linf(&self) -> f64 {
        self.delta.data().iter().fold(0.0, |m, c| m.max(c.re.abs()).max(c.im.abs()))
    }

    pub fn within_budget(&self) -> bool {
        self.linf() <= self.epsilon
    }

    /// Mean `|delta|^2` per entry.
    pub fn mean_power(&self) -> f64 {
        self.delta.norm_sqr() / self.delta.len() as f64
    }

    pub fn loss(&self) -> Option<f64> {
        self.trace.as_ref().map(|t| t.best_loss)
    }
}

/// iid complex Gaussian perturbation with per-entry variance `variance`.
pub fn random_perturb(y: &KSpaceMeasurements, variance: f64, stream: &mut RngStream) -> Result<Perturbation> {
    if !(variance >= 0.0) {
        return invalid(format!("variance must be nonnegative, got {variance}"));
    }
    let std = variance.sqrt();
    let data = (0..y.len()).map(|_| stream.complex_gaussian(std)).collect();
    Ok(Perturbation { delta: y.with_data(data)?, epsilon: f64::INFINITY, trace: None })
}

fn project(delta: &mut Tensor, eps: f64) {
    for v in delta.data_mut() {
        *v = v.clamp(-eps, eps);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient ascent inside the l-infinity ball. `objective(delta,
/// need_grad)` returns the loss and, when asked, its gradient. With
/// `momentum = Some(decay)` the step follows `m = decay m + g / ||g||_1`.
fn ascend(
    y: &KSpaceMeasurements,
    cfg: &AttackConfig,
    momentum: Option<f64>,
    stream: &mut RngStream,
    mut objective: impl FnMut(&Tensor, bool) -> Result<(f64, Option<Tensor>)>,
) -> Result<Perturbation> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let mut delta = Tensor::zeros(measurement_tensor(y).shape().to_vec());
    if eps == 0.0 {
        return Ok(Perturbation {
            delta: y.zeros_like(),
            epsilon: 0.0,
            trace: Some(AttackTrace { losses: vec![0.0], best_loss: 0.0, best_step: 0 }),
        });
    }
    if cfg.random_init {
        for v in delta.data_mut() {
            *v = stream.uniform(-eps, eps);
        }
    }
    let mut alpha = cfg.alpha();
    let (mut loss, grad) = objective(&delta, true)?;
    let mut grad = grad.expect("gradient requested");
    let mut losses = vec![loss];
    let mut best = (loss, delta.clone(), 0);
    let mut m = Tensor::zeros(delta.shape().to_vec());
    let half = cfg.steps.div_ceil(2);
    let three_q = (3 * cfg.steps).div_ceil(4);
    for step in 1..=cfg.steps {
        if !grad.is_finite() {
            return Err(Error::Numerical(format!("non-finite attack gradient at step {step}")));
        }
        let dir = match momentum {
            Some(decay) => {
                let l1: f64 = grad.data().iter().map(|v| v.abs()).sum();
                let gn = if l1 > 0.0 { grad.scale(1.0 / l1) } else { grad.clone() };
                m = m.scale(decay).axpy(1.0, &gn);
                m.clone()
            }
            None => grad.clone(),
        };
        let mut cand = delta.axpy(alpha, &dir.map(sign));
        project(&mut cand, eps);
        let need_grad = step < cfg.steps || cfg.monotone;
        let (cand_loss, cand_grad) = objective(&cand, need_grad)?;
        if cfg.monotone && cand_loss < loss {
            alpha *= 0.5;
            losses.push(loss);
            debug!("attack step {step}: rejected loss {cand_loss:.6e}, step size now {alpha:.3e}");
            continue;
        }
        delta = cand;
        loss = cand_loss;
        if let Some(g) = cand_grad {
            grad = g;
        }
        losses.push(loss);
        if loss > best.0 {
            best = (loss, delta.clone(), step);
        }
        if cfg.halving && momentum.is_some() && (step == half || step == three_q) {
            alpha *= 0.5;
        }
        debug!("attack step {step}: loss {loss:.6e}");
    }
    let (best_loss, best_delta, best_step) = best;
    Ok(Perturbation {
        delta: y.with_data(best_delta.to_complex()?)?,
        epsilon: eps,
        trace: Some(AttackTrace { losses, best_loss, best_step }),
    })
}

/// Loss and gradient of `||MoDL(y + delta) - reference||^2 / pixels`.
fn modl_objective<'a>(
    params: &'a NetworkParams,
    op: &'a Arc<ForwardOperator>,
    y: &'a KSpaceMeasurements,
    reference: &'a ComplexImage,
    cfg: &'a ModlConfig,
) -> impl FnMut(&Tensor, bool) -> Result<(f64, Option<Tensor>)> + 'a {
    let y_t = measurement_tensor(y);
    move |delta, need_grad| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false)?;
        let yv = tape.constant(y_t.clone())?;
        let dv = if need_grad { tape.variable(delta.clone())? } else { tape.constant(delta.clone())? };
        let yp = tape.add(yv, dv)?;
        let out = reconstruct_on_tape(&mut tape, &p, op, yp, cfg)?;
        let r = tape.constant(Tensor::from_image(reference))?;
        let d = tape.squared_distance(out, r)?;
        let loss = tape.scale(d, 1.0 / reference.len() as f64)?;
        let value = tape.value(loss).item();
        if !need_grad {
            return Ok((value, None));
        }
        let mut g = tape.backward(loss, Tensor::scalar(1.0))?;
        Ok((value, g.take(dv)))
    }
}

/// PGD against MoDL: maximise the distance between the clean and the
/// perturbed reconstruction. `reference` replaces the clean
/// reconstruction (e.g. with the ground truth) when given.
pub fn pgd_attack_with_reference(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    reference: Option<&ComplexImage>,
    stream: &mut RngStream,
) -> Result<Perturbation> {
    attack_modl(params, op, y, cfg, attack, reference, None, stream)
}

#[allow(clippy::too_many_arguments)]
fn attack_modl(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    reference: Option<&ComplexImage>,
    momentum: Option<f64>,
    stream: &mut RngStream,
) -> Result<Perturbation> {
    if attack.target != AttackTarget::ModlOnly {
        return invalid("this attack targets MoDL alone; use e2e_attack for the purified pipeline");
    }
    op.check_measurements(y)?;
    let reference = match reference {
        Some(r) => r.clone(),
        None => reconstruct(params, op, y, cfg)?,
    };
    ascend(y, attack, momentum, stream, modl_objective(params, op, y, &reference, cfg))
}

/// PGD against MoDL with the clean reconstruction as reference.
pub fn pgd_attack(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    stream: &mut RngStream,
) -> Result<Perturbation> {
    attack_modl(params, op, y, cfg, attack, None, None, stream)
}

/// PGD with normalised-gradient momentum and step halving; returns the
/// best iterate.
pub fn momentum_attack(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    stream: &mut RngStream,
) -> Result<Perturbation> {
    attack_modl(params, op, y, cfg, attack, None, Some(attack.momentum), stream)
}

/// Attack through purification and the purified reconstruction, with the
/// purification noise frozen across iterations.
#[allow(clippy::too_many_arguments)]
pub fn e2e_attack(
    theta_ft: &NetworkParams,
    score: &ScoreModel,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    purify_cfg: &PurifyConfig,
    cfg: &ModlConfig,
    attack: &AttackConfig,
    stream: &mut RngStream,
) -> Result<Perturbation> {
    if attack.target != AttackTarget::EndToEnd {
        return invalid("e2e_attack needs an end-to-end attack target");
    }
    op.check_measurements(y)?;
    let reference = reconstruct(theta_ft, op, y, cfg)?;
    let mut noise_stream = stream.child(0);
    let mut frozen = freeze_purification_noise(score, purify_cfg, op.height(), op.width(), &mut noise_stream)?;
    let y_t = measurement_tensor(y);
    let objective = |delta: &Tensor, need_grad: bool| {
        frozen.rewind();
        let mut tape = match attack.memory_cap {
            Some(cap) => Tape::with_memory_cap(cap),
            None => Tape::new(),
        };
        let p = theta_ft.bind(&mut tape, false)?;
        let s = score.bind(&mut tape)?;
        let yv = tape.constant(y_t.clone())?;
        let dv = if need_grad { tape.variable(delta.clone())? } else { tape.constant(delta.clone())? };
        let yp = tape.add(yv, dv)?;
        let z_pur = purify_on_tape(&mut tape, &s, op, yp, purify_cfg, &mut frozen)?;
        let out = modl_on_tape(&mut tape, &p, op, z_pur, cfg)?;
        let r = tape.constant(Tensor::from_image(&reference))?;
        let d = tape.squared_distance(out, r)?;
        let loss = tape.scale(d, 1.0 / reference.len() as f64)?;
        let value = tape.value(loss).item();
        if !need_grad {
            return Ok((value, None));
        }
        let mut g = tape.backward(loss, Tensor::scalar(1.0))?;
        Ok((value, g.take(dv)))
    };
    let plain = AttackConfig { target: AttackTarget::ModlOnly, ..*attack };
    ascend(y, &plain, None, stream, objective)
}
