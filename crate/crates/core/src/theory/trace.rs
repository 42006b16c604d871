use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A divergence evaluated over increasing times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KlTrace {
    points: Vec<(f64, f64)>,
}

impl KlTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return invalid("trace times must be strictly increasing");
        }
        Ok(Self { points })
    }

    /// Evaluates `f` on each time of `times`.
    pub fn from_fn(times: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        Self::new(times.iter().map(|&t| Ok((t, f(t)?))).collect::<Result<_>>()?)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Largest increase between consecutive values (0 for a nonincreasing
    /// trace).
    pub fn max_increase(&self) -> f64 {
        self.points.windows(2).map(|w| w[1].1 - w[0].1).fold(0.0, f64::max)
    }

    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.max_increase() <= tol
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in &self.points {
            writeln!(w, "{t},{v:e}")?;
        }
        Ok(())
    }
}

/// `start, start + step, ...` up to and including `end` (to rounding).
pub fn time_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}
