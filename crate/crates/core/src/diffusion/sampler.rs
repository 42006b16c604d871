use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::score::{BoundScore, ScoreModel};
use crate::autodiff::{LinearMap, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::forward_model::{ForwardOperator, KSpaceMeasurements};
use crate::numerics::{gaussian_image, ComplexImage, RngStream};

/// Source of the Gaussian draws consumed by diffusion and sampling.
pub trait NoiseSource {
    fn draw(&mut self, height: usize, width: usize, std: f64) -> Result<ComplexImage>;
}

impl NoiseSource for RngStream {
    fn draw(&mut self, height: usize, width: usize, std: f64) -> Result<ComplexImage> {
        gaussian_image(self, height, width, std)
    }
}

/// Passes draws through from `inner` while keeping a copy of each.
pub struct RecordingNoise<'a, S: NoiseSource + ?Sized> {
    inner: &'a mut S,
    draws: Vec<(f64, ComplexImage)>,
}

impl<'a, S: NoiseSource + ?Sized> RecordingNoise<'a, S> {
    pub fn new(inner: &'a mut S) -> Self {
        Self { inner, draws: Vec::new() }
    }

    pub fn into_frozen(self) -> FrozenNoise {
        FrozenNoise { draws: self.draws, pos: 0 }
    }
}

impl<S: NoiseSource + ?Sized> NoiseSource for RecordingNoise<'_, S> {
    fn draw(&mut self, height: usize, width: usize, std: f64) -> Result<ComplexImage> {
        let img = self.inner.draw(height, width, std)?;
        self.draws.push((std, img.clone()));
        Ok(img)
    }
}

/// Replays a recorded sequence of draws, so that a stochastic computation
/// can be repeated exactly (e.g. once per attack iteration).
#[derive(Clone, Debug, Default)]
pub struct FrozenNoise {
    draws: Vec<(f64, ComplexImage)>,
    pos: usize,
}

impl FrozenNoise {
    /// Records every draw that `f` makes from `source`.
    pub fn capture<S, T>(source: &mut S, f: impl FnOnce(&mut dyn NoiseSource) -> Result<T>) -> Result<(T, FrozenNoise)>
    where
        S: NoiseSource,
    {
        let mut rec = RecordingNoise::new(source);
        let out = f(&mut rec)?;
        Ok((out, rec.into_frozen()))
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn rewind(&mut self) {
        self.pos = 0;
    }
}

impl NoiseSource for FrozenNoise {
    fn draw(&mut self, height: usize, width: usize, std: f64) -> Result<ComplexImage> {
        let (s, img) = self
            .draws
            .get(self.pos)
            .ok_or_else(|| Error::InvalidInput("frozen noise exhausted".into()))?;
        if img.height() != height || img.width() != width || (s - std).abs() > 1e-12 * std.max(1.0) {
            return invalid(format!(
                "frozen draw {} was {}x{} at std {s}, requested {height}x{width} at std {std}",
                self.pos,
                img.height(),
                img.width()
            ));
        }
        self.pos += 1;
        Ok(img.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Corrector (Langevin) steps after each predictor step.
    pub m_r: usize,
    pub snr: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { m_r: 1, snr: 0.16 }
    }
}

/// Langevin step size `2 (snr * sigma)^2`.
pub fn corrector_step_size(sigma: f64, snr: f64) -> f64 {
    2.0 * (snr * sigma).powi(2)
}

/// Data consistency `z + A^H (y - A z)` recorded on a tape.
#[derive(Clone, Debug)]
pub struct TapeDc {
    pub op: Arc<ForwardOperator>,
    pub y: Var,
}

impl TapeDc {
    pub fn apply(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let az = tape.linear(z, LinearMap::Forward(self.op.clone()))?;
        let r = tape.sub(self.y, az)?;
        let back = tape.linear(r, LinearMap::Adjoint(self.op.clone()))?;
        tape.add(z, back)
    }
}

fn add_noise(tape: &mut Tape, z: Var, std: f64, noise: &mut dyn NoiseSource) -> Result<Var> {
    let shape = tape.value(z).shape().to_vec();
    let eta = noise.draw(shape[1], shape[2], std)?;
    let e = tape.constant(Tensor::from_image(&eta))?;
    tape.add(z, e)
}

/// One reverse step from level `i + 1` to `i`: predictor, data consistency,
/// then `m_r` corrector + data-consistency rounds at level `i`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_on_tape(
    tape: &mut Tape,
    score: &BoundScore<'_>,
    dc: Option<&TapeDc>,
    sched: &NoiseSchedule,
    i: usize,
    z: Var,
    cfg: &SamplerConfig,
    noise: &mut dyn NoiseSource,
) -> Result<Var> {
    let (hi, lo) = (sched.sigma(i + 1), sched.sigma(i));
    let dvar = hi * hi - lo * lo;
    let s = score.eval(tape, z, hi)?;
    let mut z = tape.add_scaled_const(z, dvar, s)?;
    z = add_noise(tape, z, dvar.sqrt(), noise)?;
    if let Some(dc) = dc {
        z = dc.apply(tape, z)?;
    }
    let eps = corrector_step_size(lo, cfg.snr);
    for _ in 0..cfg.m_r {
        let s = score.eval(tape, z, lo)?;
        z = tape.add_scaled_const(z, eps, s)?;
        z = add_noise(tape, z, (2.0 * eps).sqrt(), noise)?;
        if let Some(dc) = dc {
            z = dc.apply(tape, z)?;
        }
    }
    Ok(z)
}

/// Runs reverse steps from `start` down to `end` on one tape.
#[allow(clippy::too_many_arguments)]
pub fn sample_on_tape(
    tape: &mut Tape,
    score: &BoundScore<'_>,
    dc: Option<&TapeDc>,
    sched: &NoiseSchedule,
    start: usize,
    end: usize,
    cfg: &SamplerConfig,
    z: Var,
    noise: &mut dyn NoiseSource,
) -> Result<Var> {
    sched.check_step(start)?;
    if end > start {
        return invalid(format!("reverse sampling needs end <= start, got {end} > {start}"));
    }
    let mut z = z;
    for i in (end..start).rev() {
        z = reverse_step_on_tape(tape, score, dc, sched, i, z, cfg, noise)?;
    }
    Ok(z)
}

/// Where the reverse chain starts.
#[derive(Clone, Debug)]
pub enum SamplerInit {
    /// Continue from a given state (purification mode).
    From(ComplexImage),
    /// Draw `z ~ N(0, sigma_u^2 I)` at the top of the schedule.
    Prior { height: usize, width: usize },
}

/// Predictor-corrector sampling with optional data consistency, from
/// `start` down to `end`. Each step is evaluated on its own tape.
pub fn pc_sample_dc(
    score: &ScoreModel,
    dc: Option<(&Arc<ForwardOperator>, &KSpaceMeasurements)>,
    start: usize,
    end: usize,
    cfg: &SamplerConfig,
    noise: &mut dyn NoiseSource,
    init: SamplerInit,
) -> Result<ComplexImage> {
    let sched = score.schedule;
    sched.check_step(start)?;
    if end > start {
        return invalid(format!("reverse sampling needs end <= start, got {end} > {start}"));
    }
    if let Some((op, y)) = dc {
        op.check_measurements(y)?;
    }
    let mut z = match init {
        SamplerInit::From(z) => z,
        SamplerInit::Prior { height, width } => {
            if start != sched.len() - 1 {
                return invalid("sampling from the prior must start at the top of the schedule");
            }
            noise.draw(height, width, sched.sigma_u())?
        }
    };
    let y_t = dc.map(|(op, y)| Tensor::from_complex(op.num_coils() * op.height(), op.mask().num_kept(), y.data()));
    for i in (end..start).rev() {
        let mut tape = Tape::new();
        let bound = score.bind(&mut tape)?;
        let dc_t = match (&dc, &y_t) {
            (Some((op, _)), Some(y)) => Some(TapeDc { op: Arc::clone(op), y: tape.constant(y.clone())? }),
            _ => None,
        };
        let zv = tape.constant(Tensor::from_image(&z))?;
        let out = reverse_step_on_tape(&mut tape, &bound, dc_t.as_ref(), &sched, i, zv, cfg, noise)?;
        z = tape.value(out).to_image()?;
    }
    Ok(z)
}
