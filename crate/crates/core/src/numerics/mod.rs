//! Complex image arithmetic, unitary FFT, conjugate gradients and seeded
//! random streams.

mod cg;
mod cimg;
mod fft;
mod image;
mod rng;

pub use cg::{cg_solve, CgConfig, CgOutcome};
pub use cimg::{read_cimg, read_cimg_file, write_cimg, write_cimg_file, CIMG_MAGIC};
pub use fft::{fft2, fft2_raw, ifft2, ifft2_raw};
pub use image::{check_dims, ComplexImage};
pub use num_complex::Complex64;
pub use rng::{gaussian_image, RngStream};
