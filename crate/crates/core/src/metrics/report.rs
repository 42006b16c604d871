use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::quality::{psnr, ssim};
use crate::error::{Error, Result};
use crate::numerics::ComplexImage;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Formats a number for CSV output; infinities print as `inf`.
pub fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Per-image quality of one method in one scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenario: String,
    pub method: String,
    /// dB, per image.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl EvalReport {
    pub fn new(scenario: impl Into<String>, method: impl Into<String>, psnr: Vec<f64>, ssim: Vec<f64>) -> Result<Self> {
        if psnr.len() != ssim.len() {
            return Err(Error::DimensionMismatch(format!("{} PSNR vs {} SSIM values", psnr.len(), ssim.len())));
        }
        if let Some(bad) = ssim.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Numerical(format!("SSIM {bad} outside [-1, 1]")));
        }
        Ok(Self { scenario: scenario.into(), method: method.into(), psnr, ssim })
    }

    /// Scores reconstructions against references, in parallel.
    pub fn score(
        scenario: impl Into<String>,
        method: impl Into<String>,
        recons: &[ComplexImage],
        refs: &[ComplexImage],
    ) -> Result<Self> {
        if recons.len() != refs.len() {
            return Err(Error::DimensionMismatch(format!("{} reconstructions vs {} references", recons.len(), refs.len())));
        }
        let rows: Vec<(f64, f64)> = recons
            .par_iter()
            .zip(refs)
            .map(|(x, r)| Ok((psnr(x, r)?, ssim(x, r)?)))
            .collect::<Result<_>>()?;
        let (p, s) = rows.into_iter().unzip();
        Self::new(scenario, method, p, s)
    }

    pub fn len(&self) -> usize {
        self.psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psnr.is_empty()
    }

    pub fn psnr_stats(&self) -> (f64, f64) {
        mean_std(&self.psnr)
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(&self.ssim)
    }

    pub fn psnr_median(&self) -> f64 {
        median(&self.psnr)
    }

    pub fn ssim_median(&self) -> f64 {
        median(&self.ssim)
    }

    /// `method,image,psnr,ssim` rows without header.
    pub fn rows_csv(&self, out: &mut String) {
        for (k, (p, s)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            writeln!(out, "{},{k},{},{}", self.method, fmt_num(*p), fmt_num(*s)).unwrap();
        }
    }

    /// Per-image differences `self - baseline` as `(psnr, ssim)` vectors.
    pub fn deltas(&self, baseline: &EvalReport) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.len() != baseline.len() {
            return Err(Error::DimensionMismatch("reports cover different image counts".into()));
        }
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        Ok((d(&self.psnr, &baseline.psnr), d(&self.ssim, &baseline.ssim)))
    }
}

/// `a±b` with `digits` decimals; `signed` prefixes nonnegative means with `+`.
pub fn plus_minus(values: &[f64], digits: usize, signed: bool) -> String {
    let (m, s) = mean_std(values);
    if signed && m >= 0.0 {
        format!("+{m:.digits$}±{s:.digits$}")
    } else {
        format!("{m:.digits$}±{s:.digits$}")
    }
}
