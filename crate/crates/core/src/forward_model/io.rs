//! Mask CSV and measurement (CIMG1 per coil + JSON manifest) persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coils::CoilSensitivities;
use super::mask::SamplingMask;
use super::operator::{ForwardOperator, KSpaceMeasurements};
use crate::error::{Error, Result};
use crate::numerics::{read_cimg_file, write_cimg_file, ComplexImage};

const MASK_HEADER: &str = "height,width,acceleration,acs_width,seed";

/// Writes the mask as a one-row parameter header followed by a
/// `kept_column` list.
pub fn write_mask_csv(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{MASK_HEADER}").unwrap();
    writeln!(
        s,
        "{},{},{},{},{}",
        mask.height(),
        mask.width(),
        mask.acceleration(),
        mask.acs_width(),
        mask.seed()
    )
    .unwrap();
    writeln!(s, "kept_column").unwrap();
    for c in mask.kept_columns() {
        writeln!(s, "{c}").unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Format(format!("bad {what}: {field:?}")))
}

pub fn read_mask_csv(path: impl AsRef<Path>) -> Result<SamplingMask> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some(MASK_HEADER) {
        return Err(Error::Format("mask CSV header missing".into()));
    }
    let params: Vec<&str> =
        lines.next().ok_or_else(|| Error::Format("mask parameters missing".into()))?.split(',').collect();
    if params.len() != 5 {
        return Err(Error::Format("mask parameter row needs 5 fields".into()));
    }
    if lines.next().map(str::trim) != Some("kept_column") {
        return Err(Error::Format("kept_column header missing".into()));
    }
    let kept = lines.map(|l| parse(l, "column index")).collect::<Result<Vec<usize>>>()?;
    SamplingMask::from_parts(
        parse(params[0], "height")?,
        parse(params[1], "width")?,
        kept,
        parse(params[2], "acceleration")?,
        parse(params[3], "acs_width")?,
        parse(params[4], "seed")?,
    )
}

/// Sidecar for a measurement directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementManifest {
    pub fingerprint: u64,
    pub num_coils: usize,
    pub height: usize,
    pub kept: usize,
}

const MANIFEST: &str = "manifest.json";

fn coil_file(c: usize) -> String {
    format!("coil_{c:02}.cimg")
}

/// Writes one CIMG1 grid (`height x kept`) per coil plus `manifest.json`.
/// Samples are stored as f32.
pub fn write_measurements(dir: impl AsRef<Path>, y: &KSpaceMeasurements) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for c in 0..y.num_coils() {
        write_cimg_file(dir.join(coil_file(c)), y.height(), y.kept(), y.coil(c))?;
    }
    let manifest = MeasurementManifest {
        fingerprint: y.fingerprint(),
        num_coils: y.num_coils(),
        height: y.height(),
        kept: y.kept(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads measurements written by [`write_measurements`], checking that
/// they belong to `op`.
pub fn read_measurements(dir: impl AsRef<Path>, op: &ForwardOperator) -> Result<KSpaceMeasurements> {
    let dir = dir.as_ref();
    let manifest: MeasurementManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.fingerprint != op.fingerprint() {
        return Err(Error::FingerprintMismatch { expected: op.fingerprint(), found: manifest.fingerprint });
    }
    if manifest.num_coils != op.num_coils() {
        return Err(Error::DimensionMismatch(format!(
            "manifest has {} coils, operator {}",
            manifest.num_coils,
            op.num_coils()
        )));
    }
    let mut data = Vec::with_capacity(op.measurement_len());
    for c in 0..manifest.num_coils {
        let (h, k, block) = read_cimg_file(dir.join(coil_file(c)))?;
        if h != op.height() || k != op.mask().num_kept() {
            return Err(Error::DimensionMismatch(format!("coil {c} block is {h}x{k}")));
        }
        data.extend(block);
    }
    op.measurements_from(data)
}

/// Saves an operator as `mask.csv` plus one CIMG1 file per coil map.
pub fn save_operator(dir: impl AsRef<Path>, op: &ForwardOperator) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_mask_csv(dir.join("mask.csv"), op.mask())?;
    for (c, map) in op.coils().maps().iter().enumerate() {
        write_cimg_file(dir.join(format!("sens_{c:02}.cimg")), map.height(), map.width(), map.data())?;
    }
    Ok(())
}

pub fn load_operator(dir: impl AsRef<Path>) -> Result<ForwardOperator> {
    let dir = dir.as_ref();
    let mask = read_mask_csv(dir.join("mask.csv"))?;
    let mut maps = Vec::new();
    loop {
        let path = dir.join(format!("sens_{:02}.cimg", maps.len()));
        if !path.exists() {
            break;
        }
        let (h, w, data) = read_cimg_file(&path)?;
        maps.push(ComplexImage::new(h, w, data)?);
    }
    if maps.is_empty() {
        return Err(Error::Format(format!("no coil maps in {}", dir.display())));
    }
    ForwardOperator::new(mask, CoilSensitivities::new(maps)?)
}
