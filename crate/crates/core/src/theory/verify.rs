use serde::Serialize;

use super::conditional::{kl_conditional, kl_conditional_derivative, variance_rate};
use super::mixture::{fisher_divergence, mixture_marginal_kl, GaussianMixture1D, QuadratureGrid};
use super::trace::{time_grid, KlTrace};
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::numerics::{gaussian_image, RngStream};

/// Outcome of one numerical check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst measured discrepancy.
    pub measured: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TheoremReport {
    pub checks: Vec<CheckOutcome>,
    pub traces: Vec<(String, KlTrace)>,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, measured: f64, tolerance: f64) {
        self.checks.push(CheckOutcome { name: name.into(), passed: measured <= tolerance, measured, tolerance });
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Central difference of the diffused-mixture KL in `t`.
pub fn marginal_kl_rate(p: &GaussianMixture1D, q: &GaussianMixture1D, t: f64, sched: &NoiseSchedule, h: f64) -> Result<f64> {
    let kl = |s: f64| {
        let g = QuadratureGrid::covering(&p.diffused(sched, s), &q.diffused(sched, s), 12.0);
        mixture_marginal_kl(p, q, s, sched, &g)
    };
    Ok((kl(t + h)? - kl(t - h)?) / (2.0 * h))
}

/// `-1/2 dsigma^2/dt D_F(p_t || q_t)`.
pub fn fisher_rate(p: &GaussianMixture1D, q: &GaussianMixture1D, t: f64, sched: &NoiseSchedule) -> Result<f64> {
    let g = QuadratureGrid::covering(&p.diffused(sched, t), &q.diffused(sched, t), 12.0);
    Ok(-0.5 * variance_rate(sched, t) * fisher_divergence(p, q, t, sched, &g)?)
}

/// Runs the conditional and marginal KL checks with perturbations and
/// mixtures drawn from `stream`.
pub fn verify_theorem(sched: &NoiseSchedule, num_pairs: usize, stream: &mut RngStream) -> Result<TheoremReport> {
    let mut report = TheoremReport::default();

    let delta = gaussian_image(stream, 16, 16, 0.01)?;
    let cond_times = time_grid(0.1, 1.0, 0.1);
    let cond = KlTrace::from_fn(&cond_times, |t| kl_conditional(&delta, sched, t))?;
    let decreasing = if cond.is_strictly_decreasing() { 0.0 } else { 1.0 };
    report.push("conditional_kl_strictly_decreasing", decreasing, 0.0);
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 0.9] {
        let h = 1e-6;
        let fd = (kl_conditional(&delta, sched, t + h)? - kl_conditional(&delta, sched, t - h)?) / (2.0 * h);
        worst = worst.max(rel(kl_conditional_derivative(&delta, sched, t)?, fd));
    }
    report.push("conditional_kl_derivative_vs_finite_difference", worst, 1e-5);
    report.traces.push(("conditional_kl".into(), cond));

    let times = time_grid(0.05, 1.0, 0.05);
    let mut worst_increase: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for k in 0..num_pairs {
        let p = GaussianMixture1D::random(2, stream)?;
        let q = GaussianMixture1D::random(2, stream)?;
        let trace = KlTrace::from_fn(&times, |t| {
            let g = QuadratureGrid::covering(&p.diffused(sched, t), &q.diffused(sched, t), 12.0);
            mixture_marginal_kl(&p, &q, t, sched, &g)
        })?;
        worst_increase = worst_increase.max(trace.max_increase());
        for t in [0.1, 0.3, 0.5] {
            let fd = marginal_kl_rate(&p, &q, t, sched, 1e-4)?;
            worst_rel = worst_rel.max(rel(fd, fisher_rate(&p, &q, t, sched)?));
        }
        report.traces.push((format!("mixture_kl_pair{k}"), trace));
    }
    report.push("mixture_kl_nonincreasing", worst_increase, 1e-9);
    report.push("fisher_relation", worst_rel, 1e-3);
    Ok(report)
}
