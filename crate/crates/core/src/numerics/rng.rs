use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::image::{check_dims, ComplexImage};
use crate::error::{invalid, Result};

/// A reproducible random stream identified by `(master_seed, stream_index)`.
///
/// Backed by ChaCha8 with the stream index mapped onto ChaCha's native
/// stream parameter, so distinct indices give independent sequences and a
/// replayed pair reproduces the same sequence bit-for-bit.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    index: u64,
    rng: ChaCha8Rng,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { seed, index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Derives an independent stream without advancing `self`.
    pub fn child(&self, k: u64) -> RngStream {
        RngStream::new(self.seed, splitmix(self.index ^ splitmix(k.wrapping_add(1))))
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform(0.0, 1.0) * n as f64).floor().min((n - 1) as f64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Circular complex Gaussian with `E|z|^2 = std^2`.
    pub fn complex_gaussian(&mut self, std: f64) -> Complex64 {
        let s = std / std::f64::consts::SQRT_2;
        Complex64::new(s * self.gaussian(), s * self.gaussian())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Image of iid circular complex Gaussians: real and imaginary parts are
/// independent `N(0, std^2 / 2)`, so each entry has `E|z|^2 = std^2`.
pub fn gaussian_image(
    stream: &mut RngStream,
    height: usize,
    width: usize,
    std: f64,
) -> Result<ComplexImage> {
    check_dims(height, width)?;
    if !(std >= 0.0) || !std.is_finite() {
        return invalid(format!("std must be finite and >= 0, got {std}"));
    }
    let data = (0..height * width).map(|_| stream.complex_gaussian(std)).collect();
    Ok(ComplexImage::from_raw(height, width, data))
}
