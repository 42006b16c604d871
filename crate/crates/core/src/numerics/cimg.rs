//! "CIMG1" binary images: magic, u32 height, u32 width, then `height*width`
//! pairs of f32 (real, imag), all little-endian, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const CIMG_MAGIC: &[u8; 5] = b"CIMG1";

/// Writes a raw row-major complex grid. Dimensions are not restricted to
/// powers of two so that measurement blocks can use the same format.
pub fn write_cimg<W: Write>(
    mut out: W,
    height: usize,
    width: usize,
    data: &[Complex64],
) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::DimensionMismatch(format!(
            "{} samples for {height}x{width}",
            data.len()
        )));
    }
    out.write_all(CIMG_MAGIC)?;
    out.write_all(&(height as u32).to_le_bytes())?;
    out.write_all(&(width as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for c in data {
        buf.extend_from_slice(&(c.re as f32).to_le_bytes());
        buf.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_cimg<R: Read>(mut input: R) -> Result<(usize, usize, Vec<Complex64>)> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != CIMG_MAGIC {
        return Err(Error::Format("missing CIMG1 magic".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let height = u32::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let width = u32::from_le_bytes(word) as usize;
    let mut buf = vec![0u8; height * width * 8];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|b| {
            let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok((height, width, data))
}

pub fn write_cimg_file(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    data: &[Complex64],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cimg(&mut w, height, width, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_cimg_file(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Complex64>)> {
    read_cimg(BufReader::new(File::open(path)?))
}
