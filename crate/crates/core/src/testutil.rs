//! Dense linear-algebra helpers shared by unit tests.

use num_complex::Complex64;

/// Materialises a linear map on `C^n` as a row-major `n x n` matrix.
pub fn dense_matrix(n: usize, apply: impl Fn(&[Complex64]) -> Vec<Complex64>) -> Vec<Complex64> {
    let mut m = vec![Complex64::new(0.0, 0.0); n * n];
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = Complex64::new(1.0, 0.0);
        let col = apply(&e);
        for i in 0..n {
            m[i * n + j] = col[i];
        }
        e[j] = Complex64::new(0.0, 0.0);
    }
    m
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut m: Vec<Complex64>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i * n + k].norm().total_cmp(&m[j * n + k].norm())).unwrap();
        if p != k {
            for c in 0..n {
                m.swap(k * n + c, p * n + c);
            }
            b.swap(k, p);
        }
        let piv = m[k * n + k];
        for i in k + 1..n {
            let f = m[i * n + k] / piv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in k..n {
                let v = m[k * n + c];
                m[i * n + c] -= f * v;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= m[k * n + c] * x[c];
        }
        x[k] = s / m[k * n + k];
    }
    x
}

use std::sync::Arc;

use crate::forward_model::{make_cartesian_mask, make_coil_maps, ForwardOperator};
use crate::numerics::{gaussian_image, ComplexImage, RngStream};

/// Small multi-coil operator for tests.
pub fn small_op(h: usize, w: usize, coils: usize, accel: f64, seed: u64) -> Arc<ForwardOperator> {
    let mut s = RngStream::new(seed, 0);
    let mask = make_cartesian_mask(h, w, accel, 2, 0.0, &mut s).unwrap();
    let maps = make_coil_maps(h, w, coils, &mut s).unwrap();
    Arc::new(ForwardOperator::new(mask, maps).unwrap())
}

pub fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    gaussian_image(&mut RngStream::new(seed, 7), h, w, 1.0).unwrap()
}
