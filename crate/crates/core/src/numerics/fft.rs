use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::image::{check_dims, ComplexImage};
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// In-place unitary 2-D DFT over a row-major `height x width` buffer.
///
/// DC sits at index (0, 0); no shift is applied.
fn transform(height: usize, width: usize, data: &mut [Complex64], direction: FftDirection) {
    let row_fft = plan(width, direction);
    let col_fft = plan(height, direction);
    let scratch_len = row_fft
        .get_inplace_scratch_len()
        .max(col_fft.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

    // rustfft processes consecutive chunks of `len` samples.
    row_fft.process_with_scratch(data, &mut scratch);

    let mut column = vec![Complex64::new(0.0, 0.0); height * width];
    for r in 0..height {
        for c in 0..width {
            column[c * height + r] = data[r * width + c];
        }
    }
    col_fft.process_with_scratch(&mut column, &mut scratch);

    let norm = 1.0 / ((height * width) as f64).sqrt();
    for c in 0..width {
        for r in 0..height {
            data[r * width + c] = column[c * height + r] * norm;
        }
    }
}

/// Unitary forward transform of a raw row-major buffer.
pub fn fft2_raw(height: usize, width: usize, data: &mut [Complex64]) -> Result<()> {
    check_dims(height, width)?;
    transform(height, width, data, FftDirection::Forward);
    Ok(())
}

/// Unitary inverse transform of a raw row-major buffer.
pub fn ifft2_raw(height: usize, width: usize, data: &mut [Complex64]) -> Result<()> {
    check_dims(height, width)?;
    transform(height, width, data, FftDirection::Inverse);
    Ok(())
}

pub fn fft2(img: &ComplexImage) -> ComplexImage {
    let mut data = img.data().to_vec();
    transform(img.height(), img.width(), &mut data, FftDirection::Forward);
    ComplexImage::from_raw(img.height(), img.width(), data)
}

pub fn ifft2(img: &ComplexImage) -> ComplexImage {
    let mut data = img.data().to_vec();
    transform(img.height(), img.width(), &mut data, FftDirection::Inverse);
    ComplexImage::from_raw(img.height(), img.width(), data)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::numerics::{gaussian_image, RngStream};

    // Direct O(n^2) DFT, sharing nothing with the fast path.
    fn direct_dft(img: &ComplexImage, sign: f64) -> Vec<Complex64> {
        let (h, w) = (img.height(), img.width());
        let norm = 1.0 / ((h * w) as f64).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for ku in 0..h {
            for kv in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = sign
                            * 2.0
                            * PI
                            * ((ku * r) as f64 / h as f64 + (kv * c) as f64 / w as f64);
                        acc += img.get(r, c) * Complex64::from_polar(1.0, phase);
                    }
                }
                out[ku * w + kv] = acc * norm;
            }
        }
        out
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn delta_maps_to_flat_spectrum() {
        let mut img = vec![Complex64::new(0.0, 0.0); 64];
        img[0] = Complex64::new(1.0, 0.0);
        let img = ComplexImage::new(8, 8, img).unwrap();
        let spec = fft2(&img);
        for v in spec.data() {
            assert!((v - Complex64::new(0.125, 0.0)).norm() < 1e-15);
        }
        let back = ifft2(&ComplexImage::filled(8, 8, Complex64::new(0.125, 0.0)).unwrap());
        assert!((back.get(0, 0) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(back.data()[1..].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn matches_direct_dft() {
        let mut s = RngStream::new(11, 0);
        let img = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let fast = fft2(&img);
        assert!(max_diff(fast.data(), &direct_dft(&img, -1.0)) <= 1e-9);
        let fast_inv = ifft2(&img);
        assert!(max_diff(fast_inv.data(), &direct_dft(&img, 1.0)) <= 1e-9);
    }

    #[test]
    fn non_square_round_trip() {
        let mut s = RngStream::new(3, 1);
        let img = gaussian_image(&mut s, 8, 32, 1.0).unwrap();
        let back = ifft2(&fft2(&img));
        assert!(img.max_abs_diff(&back) < 1e-12);
        assert!((fft2(&img).norm() - img.norm()).abs() / img.norm() < 1e-12);
    }

    #[test]
    fn raw_rejects_bad_dims() {
        let mut buf = vec![Complex64::new(0.0, 0.0); 12 * 8];
        assert!(fft2_raw(12, 8, &mut buf).is_err());
        assert!(ifft2_raw(8, 12, &mut buf).is_err());
    }
}
