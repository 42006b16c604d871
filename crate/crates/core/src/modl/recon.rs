use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{cg_on_tape, denoiser_forward, BoundParams, LinearMap, NetworkParams, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::forward_model::{ForwardOperator, KSpaceMeasurements};
use crate::numerics::{CgConfig, ComplexImage, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModlConfig {
    pub unroll_steps: usize,
    pub lambda: f64,
    pub cg: CgConfig,
}

impl Default for ModlConfig {
    fn default() -> Self {
        Self { unroll_steps: 6, lambda: 1.0, cg: CgConfig::default() }
    }
}

impl ModlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return invalid(format!("lambda must be positive, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Ground-truth images paired with their measurements under one operator.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    op: Arc<ForwardOperator>,
    pairs: Vec<(ComplexImage, KSpaceMeasurements)>,
}

impl TrainingSet {
    pub fn new(op: Arc<ForwardOperator>, pairs: Vec<(ComplexImage, KSpaceMeasurements)>) -> Result<Self> {
        for (x, y) in &pairs {
            op.check_measurements(y)?;
            if x.height() != op.height() || x.width() != op.width() {
                return Err(Error::DimensionMismatch("training image does not match the operator".into()));
            }
        }
        Ok(Self { op, pairs })
    }

    /// Simulates noiseless measurements `y = A x` for each image.
    pub fn simulate(op: Arc<ForwardOperator>, images: &[ComplexImage]) -> Result<Self> {
        let pairs = images
            .iter()
            .map(|x| Ok((x.clone(), op.forward(x)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { op, pairs })
    }

    pub fn op(&self) -> &Arc<ForwardOperator> {
        &self.op
    }

    pub fn pairs(&self) -> &[(ComplexImage, KSpaceMeasurements)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Planar tensor view of measurements.
pub fn measurement_tensor(y: &KSpaceMeasurements) -> Tensor {
    Tensor::from_complex(y.num_coils() * y.height(), y.kept(), y.data())
}

/// Measurements from a planar tensor produced on a tape.
pub fn measurements_from_tensor(op: &ForwardOperator, t: &Tensor) -> Result<KSpaceMeasurements> {
    op.measurements_from(t.to_complex()?)
}

/// The unrolled iteration starting from `x0 = anchor`: `z = f(x)`, then
/// `x = (A^H A + lambda I)^{-1} (anchor + lambda z)`, `N` times.
pub fn modl_on_tape(
    tape: &mut Tape,
    params: &BoundParams,
    op: &Arc<ForwardOperator>,
    anchor: Var,
    cfg: &ModlConfig,
) -> Result<Var> {
    cfg.validate()?;
    let system = LinearMap::Normal { op: op.clone(), lambda: cfg.lambda };
    let mut x = anchor;
    for _ in 0..cfg.unroll_steps {
        let z = denoiser_forward(tape, params, x)?;
        let rhs = tape.add_scaled_const(anchor, cfg.lambda, z)?;
        x = cg_on_tape(tape, &system, rhs, &cfg.cg)?.0;
    }
    Ok(x)
}

/// MoDL from measurements recorded on the tape: anchor `A^H y`.
pub fn reconstruct_on_tape(
    tape: &mut Tape,
    params: &BoundParams,
    op: &Arc<ForwardOperator>,
    y: Var,
    cfg: &ModlConfig,
) -> Result<Var> {
    let anchor = tape.linear(y, LinearMap::Adjoint(op.clone()))?;
    modl_on_tape(tape, params, op, anchor, cfg)
}

/// `x_0 = A^H y`, then `N` unrolls anchored at `A^H y`.
pub fn reconstruct(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
) -> Result<ComplexImage> {
    op.check_measurements(y)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false)?;
    let yv = tape.constant(measurement_tensor(y))?;
    let out = reconstruct_on_tape(&mut tape, &p, op, yv, cfg)?;
    tape.value(out).to_image()
}

/// `x_0 = z_pur`, then `N` unrolls anchored at `z_pur` itself.
pub fn reconstruct_purified(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    z_pur: &ComplexImage,
    cfg: &ModlConfig,
) -> Result<ComplexImage> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false)?;
    let a = tape.constant(Tensor::from_image(z_pur))?;
    let out = modl_on_tape(&mut tape, &p, op, a, cfg)?;
    tape.value(out).to_image()
}

/// Randomized smoothing: mean reconstruction over `num_samples` copies of
/// `y` with complex Gaussian noise of per-entry standard deviation
/// `noise_std` added.
pub fn rs_reconstruct(
    params: &NetworkParams,
    op: &Arc<ForwardOperator>,
    y: &KSpaceMeasurements,
    cfg: &ModlConfig,
    noise_std: f64,
    num_samples: usize,
    stream: &mut RngStream,
) -> Result<ComplexImage> {
    if num_samples == 0 {
        return invalid("num_samples must be at least 1");
    }
    if noise_std == 0.0 {
        return reconstruct(params, op, y, cfg);
    }
    let noisy: Vec<KSpaceMeasurements> = (0..num_samples)
        .map(|_| {
            let data = y.data().iter().map(|v| v + stream.complex_gaussian(noise_std)).collect();
            y.with_data(data)
        })
        .collect::<Result<_>>()?;
    let recons: Vec<ComplexImage> =
        noisy.par_iter().map(|yn| reconstruct(params, op, yn, cfg)).collect::<Result<_>>()?;
    let mut acc = recons[0].clone();
    for r in &recons[1..] {
        acc = &acc + r;
    }
    Ok(acc.scale(1.0 / num_samples as f64))
}
