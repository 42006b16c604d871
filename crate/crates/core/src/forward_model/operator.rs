use log::warn;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::coils::CoilSensitivities;
use super::mask::SamplingMask;
use crate::error::{invalid, Error, Result};
use crate::numerics::{cg_solve, fft2_raw, ifft2_raw, CgConfig, ComplexImage};

/// `A = M F S`: coil weighting, unitary 2-D FFT, column subsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOperator {
    mask: SamplingMask,
    coils: CoilSensitivities,
    fingerprint: u64,
}

/// Multi-coil measurements on the kept columns.
///
/// Layout is coil-major, then k-space row, then kept-column index, so the
/// flat index of `(coil, row, j)` is `(coil * height + row) * kept + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceMeasurements {
    height: usize,
    kept: usize,
    num_coils: usize,
    data: Vec<Complex64>,
    fingerprint: u64,
}

impl KSpaceMeasurements {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn num_coils(&self) -> usize {
        self.num_coils
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The block belonging to one coil.
    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.kept;
        &self.data[c * n..(c + 1) * n]
    }

    /// Same layout and fingerprint, new samples.
    pub fn with_data(&self, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} measurement samples, got {}",
                self.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return invalid("non-finite measurement sample");
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn zeros_like(&self) -> Self {
        Self { data: vec![Complex64::new(0.0, 0.0); self.data.len()], ..self.clone() }
    }

    fn ensure_compatible(&self, other: &Self) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint,
                found: other.fingerprint,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.ensure_compatible(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.ensure_compatible(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            ..self.clone()
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Hermitian inner product.
    pub fn dot(&self, other: &Self) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }
}

fn fingerprint(mask: &SamplingMask, coils: &CoilSensitivities) -> u64 {
    let mut h = Sha256::new();
    h.update((mask.height() as u64).to_le_bytes());
    h.update((mask.width() as u64).to_le_bytes());
    for &c in mask.kept_columns() {
        h.update((c as u64).to_le_bytes());
    }
    h.update((coils.num_coils() as u64).to_le_bytes());
    for m in coils.maps() {
        for v in m.data() {
            h.update(v.re.to_bits().to_le_bytes());
            h.update(v.im.to_bits().to_le_bytes());
        }
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl ForwardOperator {
    pub fn new(mask: SamplingMask, coils: CoilSensitivities) -> Result<Self> {
        if mask.height() != coils.height() || mask.width() != coils.width() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs coil maps {}x{}",
                mask.height(),
                mask.width(),
                coils.height(),
                coils.width()
            )));
        }
        let fingerprint = fingerprint(&mask, &coils);
        Ok(Self { mask, coils, fingerprint })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn coils(&self) -> &CoilSensitivities {
        &self.coils
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn num_coils(&self) -> usize {
        self.coils.num_coils()
    }

    /// Number of complex measurement samples.
    pub fn measurement_len(&self) -> usize {
        self.num_coils() * self.height() * self.mask.num_kept()
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        if x.height() != self.height() || x.width() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}x{}, image is {}x{}",
                self.height(),
                self.width(),
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    pub fn check_measurements(&self, y: &KSpaceMeasurements) -> Result<()> {
        if y.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.fingerprint, found: y.fingerprint });
        }
        Ok(())
    }

    /// Wraps raw samples in this operator's measurement layout.
    pub fn measurements_from(&self, data: Vec<Complex64>) -> Result<KSpaceMeasurements> {
        if data.len() != self.measurement_len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} measurement samples, got {}",
                self.measurement_len(),
                data.len()
            )));
        }
        Ok(KSpaceMeasurements {
            height: self.height(),
            kept: self.mask.num_kept(),
            num_coils: self.num_coils(),
            data,
            fingerprint: self.fingerprint,
        })
    }

    pub fn zero_measurements(&self) -> KSpaceMeasurements {
        self.measurements_from(vec![Complex64::new(0.0, 0.0); self.measurement_len()])
            .expect("length matches by construction")
    }

    /// Applies `A` to a raw row-major image buffer.
    pub(crate) fn forward_raw(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (h, w) = (self.height(), self.width());
        let kept = self.mask.kept_columns();
        let mut out = Vec::with_capacity(self.measurement_len());
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for s in self.coils.maps() {
            for ((b, xv), sv) in buf.iter_mut().zip(x).zip(s.data()) {
                *b = sv * xv;
            }
            fft2_raw(h, w, &mut buf).expect("operator dims validated");
            for r in 0..h {
                out.extend(kept.iter().map(|&c| buf[r * w + c]));
            }
        }
        out
    }

    /// Applies `A^H` to a raw measurement buffer.
    pub(crate) fn adjoint_raw(&self, y: &[Complex64]) -> Vec<Complex64> {
        let (h, w) = (self.height(), self.width());
        let kept = self.mask.kept_columns();
        let k = kept.len();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for (ci, s) in self.coils.maps().iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            let block = &y[ci * h * k..(ci + 1) * h * k];
            for r in 0..h {
                for (j, &c) in kept.iter().enumerate() {
                    buf[r * w + c] = block[r * k + j];
                }
            }
            ifft2_raw(h, w, &mut buf).expect("operator dims validated");
            for ((o, b), sv) in out.iter_mut().zip(&buf).zip(s.data()) {
                *o += sv.conj() * b;
            }
        }
        out
    }

    /// `A^H A x` on a raw buffer without materialising measurements.
    pub(crate) fn normal_raw(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (h, w) = (self.height(), self.width());
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for s in self.coils.maps() {
            for ((b, xv), sv) in buf.iter_mut().zip(x).zip(s.data()) {
                *b = sv * xv;
            }
            fft2_raw(h, w, &mut buf).expect("operator dims validated");
            for r in 0..h {
                for c in 0..w {
                    if !self.mask.is_kept(c) {
                        buf[r * w + c] = Complex64::new(0.0, 0.0);
                    }
                }
            }
            ifft2_raw(h, w, &mut buf).expect("operator dims validated");
            for ((o, b), sv) in out.iter_mut().zip(&buf).zip(s.data()) {
                *o += sv.conj() * b;
            }
        }
        out
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<KSpaceMeasurements> {
        self.check_image(x)?;
        self.measurements_from(self.forward_raw(x.data()))
    }

    pub fn adjoint(&self, y: &KSpaceMeasurements) -> Result<ComplexImage> {
        self.check_measurements(y)?;
        Ok(ComplexImage::from_raw(self.height(), self.width(), self.adjoint_raw(&y.data)))
    }

    /// `A^H A x`.
    pub fn normal(&self, x: &ComplexImage) -> Result<ComplexImage> {
        self.check_image(x)?;
        Ok(ComplexImage::from_raw(self.height(), self.width(), self.normal_raw(x.data())))
    }

    /// Solves `(A^H A + lambda I) x = anchor + lambda z` by conjugate
    /// gradients. `anchor` is `A^H y` in plain MoDL and the purified image
    /// in the purified pipeline.
    pub fn dc_solve(
        &self,
        anchor: &ComplexImage,
        z: &ComplexImage,
        lambda: f64,
        cg: &CgConfig,
    ) -> Result<ComplexImage> {
        if !(lambda > 0.0) {
            return invalid(format!("lambda must be > 0, got {lambda}"));
        }
        self.check_image(anchor)?;
        self.check_image(z)?;
        let rhs = anchor.axpy(lambda, z);
        let system = |x: &ComplexImage| {
            ComplexImage::from_raw(self.height(), self.width(), self.normal_raw(x.data()))
                .axpy(lambda, x)
        };
        let out = cg_solve(system, &rhs, cg)?;
        if !out.converged {
            warn!(
                "data-consistency CG stopped at relative residual {:.3e} after {} iterations",
                out.relative_residual, out.iterations
            );
        }
        Ok(out.solution)
    }

    /// `z + A^H (y - A z)`.
    pub fn dc_project(&self, y: &KSpaceMeasurements, z: &ComplexImage) -> Result<ComplexImage> {
        self.check_measurements(y)?;
        self.check_image(z)?;
        let az = self.forward_raw(z.data());
        let resid: Vec<Complex64> = y.data.iter().zip(&az).map(|(a, b)| a - b).collect();
        let back = self.adjoint_raw(&resid);
        Ok(ComplexImage::from_raw(
            self.height(),
            self.width(),
            z.data().iter().zip(&back).map(|(a, b)| a + b).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::{make_cartesian_mask, make_coil_maps};
    use crate::numerics::{fft2, gaussian_image, ifft2, RngStream};
    use crate::testutil::{dense_matrix, dense_solve};

    fn operator(n: usize, acc: f64, coils: usize, seed: u64) -> ForwardOperator {
        let mut s = RngStream::new(seed, 0);
        let acs = crate::forward_model::default_acs_width(n).min((n as f64 / acc) as usize);
        let mask = make_cartesian_mask(n, n, acc, acs, 0.0, &mut s).unwrap();
        let maps = make_coil_maps(n, n, coils, &mut s).unwrap();
        ForwardOperator::new(mask, maps).unwrap()
    }

    fn random_measurements(op: &ForwardOperator, s: &mut RngStream) -> KSpaceMeasurements {
        op.measurements_from((0..op.measurement_len()).map(|_| s.complex_gaussian(1.0)).collect())
            .unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let op = operator(16, 4.0, 3, 1);
        let y = op.forward(&ComplexImage::zeros(16, 16).unwrap()).unwrap();
        assert_eq!(y.norm_sqr(), 0.0);
        assert_eq!(op.adjoint(&op.zero_measurements()).unwrap().norm_sqr(), 0.0);
    }

    #[test]
    fn full_mask_single_coil_is_plain_fft() {
        let mut s = RngStream::new(2, 0);
        let mask = make_cartesian_mask(16, 16, 1.0, 4, 0.0, &mut s).unwrap();
        let maps = ComplexImage::filled(16, 16, Complex64::new(1.0, 0.0)).unwrap();
        let op = ForwardOperator::new(mask, CoilSensitivities::new(vec![maps]).unwrap()).unwrap();
        let x = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let y = op.forward(&x).unwrap();
        assert!(y.data().iter().zip(fft2(&x).data()).all(|(a, b)| (a - b).norm() < 1e-14));
        let back = op.adjoint(&y).unwrap();
        assert!(back.max_abs_diff(&ifft2(&fft2(&x))) < 1e-14);
    }

    #[test]
    fn adjointness_over_random_pairs() {
        let mut s = RngStream::new(3, 0);
        for trial in 0..100 {
            let op = operator(16, [1.0, 2.0, 4.0][trial % 3], 1 + trial % 4, trial as u64);
            let x = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
            let y = random_measurements(&op, &mut s);
            let lhs = op.forward(&x).unwrap().dot(&y);
            let rhs = x.dot(&op.adjoint(&y).unwrap());
            let scale = x.norm() * y.norm_sqr().sqrt();
            assert!((lhs - rhs).norm() <= 1e-9 * scale, "trial {trial}");
        }
    }

    #[test]
    fn full_mask_normal_is_identity() {
        let mut s = RngStream::new(4, 0);
        let op = operator(16, 1.0, 4, 9);
        let x = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        assert!(op.adjoint(&op.forward(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-8);
        assert!(op.normal(&x).unwrap().max_abs_diff(&x) < 1e-8);
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let a = operator(16, 4.0, 1, 1);
        let b = operator(16, 4.0, 1, 2);
        let y = b.zero_measurements();
        assert!(matches!(a.adjoint(&y), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn dc_solve_recovers_exact_preimage() {
        let mut s = RngStream::new(5, 0);
        let op = operator(16, 4.0, 3, 5);
        let z = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let lambda = 0.7;
        let anchor = op.normal(&z).unwrap().axpy(lambda, &z);
        let zero = ComplexImage::zeros(16, 16).unwrap();
        // (A^H A + l I) x = anchor + l * 0
        let x = op.dc_solve(&anchor, &zero, lambda, &CgConfig::default()).unwrap();
        assert!(x.max_abs_diff(&z) < 1e-5);
    }

    #[test]
    fn dc_solve_full_mask_closed_form() {
        let mut s = RngStream::new(6, 0);
        let mask = make_cartesian_mask(16, 16, 1.0, 4, 0.0, &mut s).unwrap();
        let maps = make_coil_maps(16, 16, 1, &mut s).unwrap();
        let op = ForwardOperator::new(mask, maps).unwrap();
        let anchor = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let z = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        for &lambda in &[0.5, 1.0, 3.0] {
            let x = op.dc_solve(&anchor, &z, lambda, &CgConfig::default()).unwrap();
            let expected = anchor.axpy(lambda, &z).scale(1.0 / (1.0 + lambda));
            assert!(x.max_abs_diff(&expected) < 1e-10);
        }
    }

    #[test]
    fn dc_solve_matches_dense_oracle() {
        let mut s = RngStream::new(7, 0);
        let op = operator(8, 2.0, 2, 7);
        let lambda = 1.0;
        let sys = dense_matrix(64, |v| {
            let img = ComplexImage::new(8, 8, v.to_vec()).unwrap();
            op.normal(&img).unwrap().axpy(lambda, &img).into_data()
        });
        let anchor = gaussian_image(&mut s, 8, 8, 1.0).unwrap();
        let z = gaussian_image(&mut s, 8, 8, 1.0).unwrap();
        let rhs = anchor.axpy(lambda, &z);
        let exact = dense_solve(sys, rhs.data().to_vec());
        let x = op.dc_solve(&anchor, &z, lambda, &CgConfig::default()).unwrap();
        let err = x.data().iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "max error {err}");
    }

    #[test]
    fn dc_solve_tends_to_z_for_large_lambda() {
        let mut s = RngStream::new(8, 0);
        let op = operator(16, 4.0, 2, 8);
        let x = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let anchor = op.adjoint(&op.forward(&x).unwrap()).unwrap();
        let z = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let dist: Vec<f64> = [1.0, 1e3, 1e6]
            .iter()
            .map(|&l| (&op.dc_solve(&anchor, &z, l, &CgConfig::default()).unwrap() - &z).norm())
            .collect();
        assert!(dist[1] < dist[0] && dist[2] < dist[1]);
        // O(1/lambda): the distance times lambda stays bounded.
        assert!(dist[1] * 1e3 < 10.0 * (anchor.norm() + z.norm()));
        assert!(dist[2] * 1e6 < 10.0 * (anchor.norm() + z.norm()));
    }

    #[test]
    fn dc_project_single_coil_pins_kept_frequencies() {
        let mut s = RngStream::new(9, 0);
        let op = operator(16, 4.0, 1, 9);
        let truth = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let y = op.forward(&truth).unwrap();
        let z = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let out = op.dc_project(&y, &z).unwrap();
        // Compare per frequency after undoing the coil weighting.
        let coil = &op.coils().maps()[0];
        let k_out = fft2(&coil.hadamard(&out));
        let k_in = fft2(&coil.hadamard(&z));
        let kept = op.mask().kept_columns();
        for r in 0..16 {
            for c in 0..16 {
                let v = k_out.get(r, c);
                if let Ok(j) = kept.binary_search(&c) {
                    assert!((v - y.data()[r * kept.len() + j]).norm() < 1e-12);
                } else {
                    assert!((v - k_in.get(r, c)).norm() < 1e-12);
                }
            }
        }
        // Already-consistent input is a fixed point.
        let again = op.dc_project(&y, &out).unwrap();
        assert!(again.max_abs_diff(&out) < 1e-12);
    }

    #[test]
    fn dc_project_multi_coil_does_not_increase_residual() {
        let mut s = RngStream::new(10, 0);
        let op = operator(16, 4.0, 4, 10);
        let truth = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
        let y = op.forward(&truth).unwrap();
        for _ in 0..10 {
            let z = gaussian_image(&mut s, 16, 16, 1.0).unwrap();
            let before = op.forward(&z).unwrap().sub(&y).unwrap().norm_sqr();
            let out = op.dc_project(&y, &z).unwrap();
            let after = op.forward(&out).unwrap().sub(&y).unwrap().norm_sqr();
            assert!(after <= before * (1.0 + 1e-12));
        }
    }
}
