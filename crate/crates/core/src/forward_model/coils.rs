use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::numerics::{check_dims, ComplexImage, RngStream};

/// Per-coil complex sensitivity maps with `sum_c |S_c|^2 = 1` at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    maps: Vec<ComplexImage>,
}

impl CoilSensitivities {
    /// Wraps maps after checking shapes and the per-pixel normalization.
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::InvalidInput("no coil maps".into()))?;
        for m in &maps[1..] {
            first.ensure_same_shape(m)?;
        }
        for p in 0..first.len() {
            let energy: f64 = maps.iter().map(|m| m.data()[p].norm_sqr()).sum();
            if (energy - 1.0).abs() > 1e-6 {
                return invalid(format!("coil energy {energy} at pixel {p} is not 1"));
            }
        }
        Ok(Self { maps })
    }

    pub fn num_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[ComplexImage] {
        &self.maps
    }

    pub fn height(&self) -> usize {
        self.maps[0].height()
    }

    pub fn width(&self) -> usize {
        self.maps[0].width()
    }
}

/// Synthetic smooth maps: Gaussian bumps centred around the field of view,
/// each with a random linear phase, normalized per pixel.
pub fn make_coil_maps(
    height: usize,
    width: usize,
    num_coils: usize,
    stream: &mut RngStream,
) -> Result<CoilSensitivities> {
    check_dims(height, width)?;
    if num_coils == 0 {
        return invalid("num_coils must be >= 1");
    }
    let (h, w) = (height as f64, width as f64);
    let radius = 0.6 * h.min(w);
    let offset = stream.uniform(0.0, 2.0 * PI);
    let raw: Vec<Vec<Complex64>> = (0..num_coils)
        .map(|c| {
            let angle = offset + 2.0 * PI * c as f64 / num_coils as f64;
            let (cy, cx) = if num_coils == 1 {
                (h / 2.0, w / 2.0)
            } else {
                (h / 2.0 + 0.45 * h * angle.sin(), w / 2.0 + 0.45 * w * angle.cos())
            };
            let ky = stream.uniform(-1.0, 1.0) * PI / h;
            let kx = stream.uniform(-1.0, 1.0) * PI / w;
            let phase0 = stream.uniform(0.0, 2.0 * PI);
            let mut data = Vec::with_capacity(height * width);
            for r in 0..height {
                for col in 0..width {
                    let (dy, dx) = (r as f64 - cy, col as f64 - cx);
                    let mag = (-(dy * dy + dx * dx) / (2.0 * radius * radius)).exp();
                    let phase = phase0 + ky * r as f64 + kx * col as f64;
                    data.push(Complex64::from_polar(mag, phase));
                }
            }
            data
        })
        .collect();

    let mut maps: Vec<Vec<Complex64>> = raw.clone();
    for p in 0..height * width {
        let norm: f64 = raw.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[p] /= norm;
        }
    }
    let maps = maps
        .into_iter()
        .map(|d| ComplexImage::new(height, width, d))
        .collect::<Result<Vec<_>>>()?;
    CoilSensitivities::new(maps)
}
