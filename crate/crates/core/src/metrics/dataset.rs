use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{read_cimg_file, write_cimg_file, ComplexImage};

/// Writes `img_00000.cimg`, `img_00001.cimg`, ... into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, images: &[ComplexImage]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (k, img) in images.iter().enumerate() {
        write_cimg_file(dir.join(format!("img_{k:05}.cimg")), img.height(), img.width(), img.data())?;
    }
    Ok(())
}

/// The `.cimg` files of `dir` in name order.
pub fn dataset_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::Format(format!("cannot read dataset {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cimg"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads every `.cimg` image of `dir` in name order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ComplexImage>> {
    dataset_files(dir)?
        .iter()
        .map(|p| {
            let (h, w, data) = read_cimg_file(p)?;
            ComplexImage::new(h, w, data)
        })
        .collect()
}

/// Rounds every sample to `f32`, as storage would.
pub fn quantize(img: &ComplexImage) -> ComplexImage {
    img.map(|c| num_complex::Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
}
