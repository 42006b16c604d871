use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::{gaussian_image, ComplexImage, RngStream};

/// Paired unperturbed / perturbed image sets of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSets {
    clean: Vec<ComplexImage>,
    perturbed: Vec<ComplexImage>,
}

impl SampleSets {
    pub fn new(clean: Vec<ComplexImage>, perturbed: Vec<ComplexImage>) -> Result<Self> {
        if clean.len() != perturbed.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} clean vs {} perturbed images",
                clean.len(),
                perturbed.len()
            )));
        }
        if let Some(first) = clean.first() {
            for img in clean.iter().chain(&perturbed) {
                first.ensure_same_shape(img)?;
            }
        }
        Ok(Self { clean, perturbed })
    }

    pub fn clean(&self) -> &[ComplexImage] {
        &self.clean
    }

    pub fn perturbed(&self) -> &[ComplexImage] {
        &self.perturbed
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self { clean: self.perturbed.clone(), perturbed: self.clean.clone() }
    }
}

fn kernel(a: &ComplexImage, b: &ComplexImage, v: f64) -> f64 {
    let d: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum();
    (-d / (2.0 * v * v)).exp()
}

fn within_sum(set: &[ComplexImage], v: f64) -> f64 {
    // ordered pairs i != j, computed once per unordered pair
    let rows: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| (i + 1..set.len()).map(|j| kernel(&set[i], &set[j], v)).sum::<f64>())
        .collect();
    2.0 * rows.iter().sum::<f64>()
}

fn cross_sum(a: &[ComplexImage], b: &[ComplexImage], v: f64) -> f64 {
    let rows: Vec<f64> =
        a.par_iter().map(|x| b.iter().map(|y| kernel(x, y, v)).sum::<f64>()).collect();
    rows.iter().sum()
}

/// Empirical MMD with a Gaussian kernel of bandwidth `v`:
/// `C (sum_{i!=j} k(z_i, z_j) + sum_{i!=j} k(zp_i, zp_j)) - 2/n^2 sum_{i,j} k(z_i, zp_j)`
/// with `C = 1 / (n (n - 1))`.
pub fn mmd(sets: &SampleSets, v: f64) -> Result<f64> {
    let n = sets.len();
    if n < 2 {
        return invalid(format!("MMD needs at least 2 images per set, got {n}"));
    }
    if !(v > 0.0) || !v.is_finite() {
        return invalid(format!("kernel bandwidth must be positive, got {v}"));
    }
    let c = 1.0 / (n * (n - 1)) as f64;
    let nf = n as f64;
    let within = within_sum(&sets.clean, v) + within_sum(&sets.perturbed, v);
    Ok(c * within - 2.0 / (nf * nf) * cross_sum(&sets.clean, &sets.perturbed, v))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Mean per-pixel magnitude over all images.
    #[default]
    MeanMagnitude,
    /// Mean l2 norm of the images.
    MeanNorm,
}

/// Mean of the per-pixel magnitudes across all pixels of all images.
pub fn default_bandwidth(images: &[ComplexImage]) -> f64 {
    bandwidth(images, BandwidthRule::MeanMagnitude)
}

pub fn bandwidth(images: &[ComplexImage], rule: BandwidthRule) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let per_image: Vec<f64> = images
        .iter()
        .map(|img| match rule {
            BandwidthRule::MeanMagnitude => img.data().iter().map(|c| c.norm()).sum::<f64>() / img.len() as f64,
            BandwidthRule::MeanNorm => img.norm(),
        })
        .collect();
    per_image.iter().sum::<f64>() / images.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// The same draw perturbs the clean and perturbed image at each list
    /// position.
    #[default]
    Shared,
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PstConfig {
    pub tau: f64,
    pub bandwidth: BandwidthRule,
    pub coupling: NoiseCoupling,
    /// Last step at which the trajectory is evaluated (defaults to the top
    /// of the schedule).
    pub max_step: Option<usize>,
    /// Keep evaluating after the threshold is met, up to `max_step`.
    pub full_trajectory: bool,
}

impl Default for PstConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            bandwidth: BandwidthRule::MeanMagnitude,
            coupling: NoiseCoupling::Shared,
            max_step: None,
            full_trajectory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PstSelection {
    pub step: usize,
    pub found: bool,
    pub bandwidth: f64,
    /// `(step, mmd)` for every evaluated step.
    pub trajectory: Vec<(usize, f64)>,
}

/// Smallest step at which the diffused sets are within `tau` in MMD.
/// Both sets are diffused one schedule step at a time with per-position
/// streams; the bandwidth is fixed from the clean set at step 0.
pub fn select_pst(
    sets: &SampleSets,
    sched: &NoiseSchedule,
    cfg: &PstConfig,
    stream: &RngStream,
) -> Result<PstSelection> {
    if !(cfg.tau > 0.0) {
        return invalid(format!("tau must be positive, got {}", cfg.tau));
    }
    let v = bandwidth(&sets.clean, cfg.bandwidth);
    let n = sets.len();
    let last = cfg.max_step.unwrap_or(sched.len() - 1).min(sched.len() - 1);
    let mut streams: Vec<(RngStream, RngStream)> = (0..n)
        .map(|k| {
            let a = stream.child(k as u64);
            let b = match cfg.coupling {
                NoiseCoupling::Shared => a.clone(),
                NoiseCoupling::Independent => stream.child((n + k) as u64),
            };
            (a, b)
        })
        .collect();
    let mut cur = sets.clone();
    let mut trajectory = Vec::new();
    let mut selected = None;
    for i in 0..=last {
        if i > 0 {
            let std = sched.variance_between(i - 1, i).sqrt();
            for (k, (sa, sb)) in streams.iter_mut().enumerate() {
                let (h, w) = (cur.clean[k].height(), cur.clean[k].width());
                let ea = gaussian_image(sa, h, w, std)?;
                let eb = gaussian_image(sb, h, w, std)?;
                cur.clean[k] = &cur.clean[k] + &ea;
                cur.perturbed[k] = &cur.perturbed[k] + &eb;
            }
        }
        let m = mmd(&cur, v)?;
        trajectory.push((i, m));
        if selected.is_none() && m <= cfg.tau {
            selected = Some(i);
            if !cfg.full_trajectory {
                break;
            }
        }
    }
    Ok(PstSelection { step: selected.unwrap_or(sched.len() - 1), found: selected.is_some(), bandwidth: v, trajectory })
}
