use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Validates image dimensions: both powers of two, each at least 8.
pub fn check_dims(height: usize, width: usize) -> Result<()> {
    let ok = |n: usize| n >= 8 && n.is_power_of_two();
    if ok(height) && ok(width) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "image dimensions must be powers of two >= 8, got {height}x{width}"
        )))
    }
}

/// A 2-D grid of complex samples stored row-major.
///
/// Every constructor that accepts external data checks that dimensions are
/// powers of two (at least 8) and that all samples are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, Complex64::new(0.0, 0.0))
    }

    pub fn filled(height: usize, width: usize, value: Complex64) -> Result<Self> {
        check_dims(height, width)?;
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Builds an image without validation; callers guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &ComplexImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_same_shape(&self, other: &ComplexImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Squared l2 norm, i.e. the squared norm of the 2n-real embedding.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `sum(conj(self) * other)`.
    pub fn dot(&self, other: &ComplexImage) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&c| f(c)).collect())
    }

    pub fn zip_map(
        &self,
        other: &ComplexImage,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> ComplexImage {
        debug_assert!(self.same_shape(other));
        Self::from_raw(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> ComplexImage {
        self.map(|c| c * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ComplexImage) -> ComplexImage {
        self.zip_map(other, |a, b| a + b * s)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ComplexImage) -> ComplexImage {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn max_abs_diff(&self, other: &ComplexImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Add for &ComplexImage {
    type Output = ComplexImage;
    fn add(self, rhs: &ComplexImage) -> ComplexImage {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ComplexImage {
    type Output = ComplexImage;
    fn sub(self, rhs: &ComplexImage) -> ComplexImage {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ComplexImage {
    type Output = ComplexImage;
    fn mul(self, rhs: f64) -> ComplexImage {
        self.scale(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dims() {
        assert!(ComplexImage::zeros(8, 12).is_err());
        assert!(ComplexImage::zeros(4, 8).is_err());
        assert!(ComplexImage::zeros(8, 16).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut data = vec![Complex64::new(0.0, 0.0); 64];
        data[5] = Complex64::new(f64::NAN, 0.0);
        assert!(ComplexImage::new(8, 8, data).is_err());
    }

    #[test]
    fn dot_is_hermitian() {
        let a = ComplexImage::from_fn(8, 8, |r, c| Complex64::new(r as f64, c as f64)).unwrap();
        let b = ComplexImage::from_fn(8, 8, |r, c| Complex64::new(1.0, (r * c) as f64)).unwrap();
        let ab = a.dot(&b);
        let ba = b.dot(&a);
        assert!((ab - ba.conj()).norm() < 1e-12);
        assert!((a.dot(&a).re - a.norm_sqr()).abs() < 1e-9);
    }
}
