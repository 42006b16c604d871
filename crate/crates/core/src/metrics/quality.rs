use crate::error::{invalid, Result};
use crate::numerics::ComplexImage;

/// PSNR in dB of `|x|` against `|reference|`, with peak `max |reference|`.
/// Identical magnitudes give `f64::INFINITY`.
pub fn psnr(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    x.ensure_same_shape(reference)?;
    let (a, b) = (x.magnitude(), reference.magnitude());
    let peak = b.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return invalid("PSNR reference is all zero");
    }
    let mse = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const WINDOW_STD: f64 = 1.5;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * WINDOW_STD * WINDOW_STD)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable filter over valid window positions.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| g[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// SSIM of the magnitude images with an 11x11 Gaussian window (std 1.5),
/// `K1 = 0.01`, `K2 = 0.03` and dynamic range `max |reference|`, averaged
/// over all valid window positions. Images smaller than the window use the
/// largest odd window that fits.
pub fn ssim(x: &ComplexImage, reference: &ComplexImage) -> Result<f64> {
    x.ensure_same_shape(reference)?;
    let (h, w) = (x.height(), x.width());
    let size = WINDOW.min(h.min(w) - (1 - h.min(w) % 2));
    let g = gaussian_window(size);
    let (a, b) = (x.magnitude(), reference.magnitude());
    let range = b.iter().copied().fold(0.0, f64::max);
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);
    let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, _, _) = filter(&a, h, w, &g);
    let (mu_b, _, _) = filter(&b, h, w, &g);
    let (aa, _, _) = filter(&prod(&a, &a), h, w, &g);
    let (bb, _, _) = filter(&prod(&b, &b), h, w, &g);
    let (ab, _, _) = filter(&prod(&a, &b), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / n as f64)
}
