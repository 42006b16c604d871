use serde::{Deserialize, Serialize};

use super::nets::NetworkParams;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.tensors().len() || state.m.len() != grads.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter tensors, {} gradients, {} moments",
            params.tensors().len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        p.ensure_same_shape(g)?;
        if !g.is_finite() {
            return invalid("non-finite gradient");
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their joint l2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sqr).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}
