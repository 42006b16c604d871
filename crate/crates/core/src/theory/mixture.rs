use serde::{Deserialize, Serialize};

use super::conditional::added_variance;
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::RngStream;

/// A real one-dimensional Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture1D {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
            return invalid("mixture needs equal, nonzero numbers of weights, means and stds");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return invalid("mixture weights must be nonnegative and sum to 1");
        }
        if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || means.iter().any(|m| !m.is_finite()) {
            return invalid("mixture stds must be positive and means finite");
        }
        Ok(Self { weights, means, stds })
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    /// Random `k`-component mixture with means in `[-3, 3]` and stds in
    /// `[0.3, 1.5]`.
    pub fn random(k: usize, stream: &mut RngStream) -> Result<Self> {
        let raw: Vec<f64> = (0..k).map(|_| stream.uniform(0.1, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        if let Some(last) = weights.last_mut() {
            *last = 1.0 - raw[..k - 1].iter().map(|w| w / total).sum::<f64>();
        }
        let means = (0..k).map(|_| stream.uniform(-3.0, 3.0)).collect();
        let stds = (0..k).map(|_| stream.uniform(0.3, 1.5)).collect();
        Self::new(weights, means, stds)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Convolution with `N(0, extra_var)`.
    pub fn convolved(&self, extra_var: f64) -> Self {
        let stds = self.stds.iter().map(|s| (s * s + extra_var).sqrt()).collect();
        Self { weights: self.weights.clone(), means: self.means.clone(), stds }
    }

    /// The mixture diffused from time 0 to `t`.
    pub fn diffused(&self, sched: &NoiseSchedule, t: f64) -> Self {
        self.convolved(added_variance(sched, t))
    }

    fn log_terms(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().zip(&self.means).zip(&self.stds).map(move |((w, m), s)| {
            let z = (x - m) / s;
            w.ln() - 0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let max = self.log_terms(x).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + self.log_terms(x).map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// `d/dx log p(x)`.
    pub fn score(&self, x: f64) -> f64 {
        let logs: Vec<f64> = self.log_terms(x).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for ((l, m), s) in logs.iter().zip(&self.means).zip(&self.stds) {
            let r = (l - max).exp();
            num += r * (m - x) / (s * s);
            den += r;
        }
        num / den
    }

    /// Smallest and largest `mean -/+ k std` over the components.
    pub fn span(&self, k: f64) -> (f64, f64) {
        let lo = self.means.iter().zip(&self.stds).map(|(m, s)| m - k * s).fold(f64::INFINITY, f64::min);
        let hi = self.means.iter().zip(&self.stds).map(|(m, s)| m + k * s).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Integration interval and adaptive-trapezoid settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub initial_intervals: usize,
    /// Stop doubling once the relative change falls below this.
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl QuadratureGrid {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, initial_intervals: 64, rel_tol: 1e-8, max_doublings: 18 }
    }

    /// An interval covering `k` standard deviations of every component of
    /// both diffused mixtures.
    pub fn covering(p: &GaussianMixture1D, q: &GaussianMixture1D, k: f64) -> Self {
        let (a, b) = p.span(k);
        let (c, d) = q.span(k);
        Self::new(a.min(c), b.max(d))
    }

    /// Adaptive trapezoid: doubles the number of intervals until the
    /// estimate changes by less than `rel_tol` relative to its magnitude.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        if !(self.hi > self.lo) || self.initial_intervals == 0 {
            return invalid(format!("empty quadrature interval [{}, {}]", self.lo, self.hi));
        }
        let mut n = self.initial_intervals;
        let mut h = (self.hi - self.lo) / n as f64;
        let mut sum = 0.5 * (f(self.lo) + f(self.hi)) + (1..n).map(|k| f(self.lo + k as f64 * h)).sum::<f64>();
        let mut est = sum * h;
        for _ in 0..self.max_doublings {
            let mids: f64 = (0..n).map(|k| f(self.lo + (k as f64 + 0.5) * h)).sum();
            sum += mids;
            n *= 2;
            h *= 0.5;
            let next = sum * h;
            let change = (next - est).abs();
            est = next;
            if !est.is_finite() {
                return Err(Error::Numerical("quadrature produced a non-finite value".into()));
            }
            if change <= self.rel_tol * est.abs().max(1e-300) || change == 0.0 {
                return Ok(est);
            }
        }
        Err(Error::Numerical(format!(
            "quadrature did not reach relative tolerance {} after {} doublings",
            self.rel_tol, self.max_doublings
        )))
    }
}

fn check_coverage(grid: &QuadratureGrid, p: &GaussianMixture1D, q: &GaussianMixture1D) -> Result<()> {
    for (name, m) in [("p", p), ("q", q)] {
        let mass = grid.integrate(|x| m.pdf(x))?;
        if mass < 1.0 - 1e-8 {
            return invalid(format!(
                "quadrature interval [{}, {}] captures only {mass:.12} of the diffused {name}",
                grid.lo, grid.hi
            ));
        }
    }
    Ok(())
}

/// `KL(p_t || q_t)` between the diffused mixtures, by quadrature.
pub fn mixture_marginal_kl(
    p: &GaussianMixture1D,
    q: &GaussianMixture1D,
    t: f64,
    sched: &NoiseSchedule,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let (pt, qt) = (p.diffused(sched, t), q.diffused(sched, t));
    check_coverage(grid, &pt, &qt)?;
    grid.integrate(|x| {
        let lp = pt.log_pdf(x);
        let v = lp.exp() * (lp - qt.log_pdf(x));
        if v.is_nan() {
            0.0
        } else {
            v
        }
    })
}

/// Fisher divergence `int p_t (d log p_t - d log q_t)^2` between the
/// diffused mixtures.
pub fn fisher_divergence(
    p: &GaussianMixture1D,
    q: &GaussianMixture1D,
    t: f64,
    sched: &NoiseSchedule,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let (pt, qt) = (p.diffused(sched, t), q.diffused(sched, t));
    check_coverage(grid, &pt, &qt)?;
    grid.integrate(|x| {
        let d = pt.score(x) - qt.score(x);
        pt.pdf(x) * d * d
    })
}
