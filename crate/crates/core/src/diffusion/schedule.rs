use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use super::sampler::NoiseSource;
use crate::numerics::{ComplexImage, RngStream};

/// Geometric noise levels `sigma(i) = sigma_l (sigma_u / sigma_l)^(i / (n_r - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigma_l: f64,
    sigma_u: f64,
    n_r: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { sigma_l: 0.01, sigma_u: 378.0, n_r: 500 }
    }
}

pub fn make_schedule(sigma_l: f64, sigma_u: f64, n_r: usize) -> Result<NoiseSchedule> {
    if !(sigma_l > 0.0 && sigma_l < 1.0) {
        return invalid(format!("sigma_l must lie in (0, 1), got {sigma_l}"));
    }
    if !(sigma_u > 1.0) || !sigma_u.is_finite() {
        return invalid(format!("sigma_u must exceed 1, got {sigma_u}"));
    }
    if n_r < 2 {
        return invalid(format!("need at least 2 noise levels, got {n_r}"));
    }
    Ok(NoiseSchedule { sigma_l, sigma_u, n_r })
}

impl NoiseSchedule {
    pub fn sigma_l(&self) -> f64 {
        self.sigma_l
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u
    }

    pub fn len(&self) -> usize {
        self.n_r
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Continuous time of step `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 / (self.n_r - 1) as f64
    }

    /// `sigma(t)` for continuous `t` in `[0, 1]`.
    pub fn sigma_at(&self, t: f64) -> f64 {
        self.sigma_l * (self.sigma_u / self.sigma_l).powf(t)
    }

    pub fn sigma(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_r);
        if i == self.n_r - 1 {
            return self.sigma_u;
        }
        self.sigma_at(self.time(i))
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.n_r).map(|i| self.sigma(i)).collect()
    }

    /// `sigma(j)^2 - sigma(i)^2`.
    pub fn variance_between(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.sigma(i), self.sigma(j));
        b * b - a * a
    }

    pub(crate) fn check_step(&self, i: usize) -> Result<()> {
        if i >= self.n_r {
            return invalid(format!("step {i} outside schedule of length {}", self.n_r));
        }
        Ok(())
    }
}

/// Adds Gaussian noise of total variance `sigma(to)^2 - sigma(from)^2` in
/// a single draw.
pub fn forward_diffuse(
    z: &ComplexImage,
    from: usize,
    to: usize,
    sched: &NoiseSchedule,
    stream: &mut RngStream,
) -> Result<ComplexImage> {
    forward_diffuse_with(z, from, to, sched, stream)
}

/// [`forward_diffuse`] drawing from an arbitrary noise source.
pub fn forward_diffuse_with(
    z: &ComplexImage,
    from: usize,
    to: usize,
    sched: &NoiseSchedule,
    noise: &mut dyn NoiseSource,
) -> Result<ComplexImage> {
    sched.check_step(to)?;
    if to < from {
        return invalid(format!("forward diffusion must not go backwards ({from} -> {to})"));
    }
    if to == from {
        return Ok(z.clone());
    }
    let std = sched.variance_between(from, to).sqrt();
    let eta = noise.draw(z.height(), z.width(), std)?;
    Ok(z + &eta)
}
