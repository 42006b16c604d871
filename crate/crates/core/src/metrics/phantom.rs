use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{check_dims, Complex64, ComplexImage, RngStream};

/// Shape family of the synthetic objects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomFamily {
    #[default]
    Ellipses,
    /// Axis-aligned rectangles, for cross-family transfer experiments.
    Rectangles,
}

/// Magnitude used when a phantom contains no shapes at all.
pub const EMPTY_BACKGROUND: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub family: PhantomFamily,
    /// Inclusive range of shapes per image.
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Range of the additive intensity of each shape.
    pub min_intensity: f64,
    pub max_intensity: f64,
    /// Peak amplitude (radians) of the smooth random phase.
    pub phase_scale: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            count: 64,
            height: 32,
            width: 32,
            family: PhantomFamily::Ellipses,
            min_shapes: 3,
            max_shapes: 6,
            min_intensity: 0.2,
            max_intensity: 1.0,
            phase_scale: 1.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        check_dims(self.height, self.width)?;
        if self.count == 0 {
            return invalid("phantom count must be at least 1");
        }
        if self.min_shapes > self.max_shapes {
            return invalid("min_shapes exceeds max_shapes");
        }
        if !(self.min_intensity <= self.max_intensity) || !(self.phase_scale >= 0.0) {
            return invalid("invalid intensity range or phase scale");
        }
        Ok(())
    }
}

fn phantom(spec: &PhantomSpec, stream: &mut RngStream) -> Result<ComplexImage> {
    let (h, w) = (spec.height, spec.width);
    let mut mag = vec![0.0; h * w];
    let n = spec.min_shapes + stream.below(spec.max_shapes - spec.min_shapes + 1);
    for _ in 0..n {
        let (cx, cy) = (stream.uniform(-0.5, 0.5), stream.uniform(-0.5, 0.5));
        let (ax, ay) = (stream.uniform(0.1, 0.5), stream.uniform(0.1, 0.5));
        let theta = stream.uniform(0.0, PI);
        let val = stream.uniform(spec.min_intensity, spec.max_intensity);
        let (ct, st) = (theta.cos(), theta.sin());
        for r in 0..h {
            let y = 2.0 * r as f64 / h as f64 - 1.0 - cy;
            for c in 0..w {
                let x = 2.0 * c as f64 / w as f64 - 1.0 - cx;
                let inside = match spec.family {
                    PhantomFamily::Ellipses => {
                        let (u, v) = (x * ct + y * st, -x * st + y * ct);
                        (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
                    }
                    PhantomFamily::Rectangles => x.abs() <= ax && y.abs() <= ay,
                };
                if inside {
                    mag[r * w + c] += val;
                }
            }
        }
    }
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        mag.iter_mut().for_each(|m| *m /= peak);
    } else {
        mag.iter_mut().for_each(|m| *m = EMPTY_BACKGROUND);
    }
    // smooth phase: a few random low-frequency planar cosines
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| (stream.uniform(-1.0, 1.0), stream.uniform(-1.0, 1.0), stream.uniform(0.0, 2.0 * PI), stream.uniform(0.0, 1.0)))
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum::<f64>().max(1e-12);
    ComplexImage::from_fn(h, w, |r, c| {
        let (y, x) = (r as f64 / h as f64, c as f64 / w as f64);
        let phase: f64 = waves.iter().map(|(fx, fy, p, a)| a * (PI * (fx * x + fy * y) + p).cos()).sum();
        Complex64::from_polar(mag[r * w + c], spec.phase_scale * phase / norm)
    })
}

/// Random shape superpositions with smooth random phase, scaled to peak
/// magnitude 1. Image `k` draws from `RngStream::new(seed, 0).child(k)`.
pub fn gen_phantoms(spec: &PhantomSpec) -> Result<Vec<ComplexImage>> {
    spec.validate()?;
    let base = RngStream::new(spec.seed, 0);
    (0..spec.count).into_par_iter().map(|k| phantom(spec, &mut base.child(k as u64))).collect()
}
