use std::collections::BTreeSet;

use crate::error::{invalid, Result};
use crate::numerics::{check_dims, RngStream};

/// How the non-ACS phase-encode columns are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLayout {
    #[default]
    Random,
    Equispaced,
}

/// Cartesian column-subsampling pattern in unshifted (DC at column 0)
/// k-space ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    kept: Vec<usize>,
    acceleration: f64,
    acs_width: usize,
    seed: u64,
}

pub fn default_acs_width(width: usize) -> usize {
    (width / 16).max(4)
}

/// Signed frequency of column `c` for a width-`w` unshifted spectrum.
fn frequency(c: usize, w: usize) -> usize {
    c.min(w - c)
}

/// The `acs_width` lowest-frequency columns, i.e. the centered block after
/// an fftshift mapped back to unshifted ordering.
fn acs_columns(width: usize, acs_width: usize) -> Vec<usize> {
    let start = width / 2 - acs_width / 2;
    let mut cols: Vec<usize> =
        (start..start + acs_width).map(|s| (s + width / 2) % width).collect();
    cols.sort_unstable();
    cols
}

impl SamplingMask {
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        mut kept: Vec<usize>,
        acceleration: f64,
        acs_width: usize,
        seed: u64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        kept.sort_unstable();
        kept.dedup();
        if kept.iter().any(|&c| c >= width) {
            return invalid("kept column index out of range");
        }
        let mask = Self { height, width, kept, acceleration, acs_width, seed };
        if !mask.acs().iter().all(|c| mask.is_kept(*c)) {
            return invalid("ACS columns must be kept");
        }
        Ok(mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept
    }

    pub fn num_kept(&self) -> usize {
        self.kept.len()
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn acs_width(&self) -> usize {
        self.acs_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_kept(&self, col: usize) -> bool {
        self.kept.binary_search(&col).is_ok()
    }

    pub fn acs(&self) -> Vec<usize> {
        acs_columns(self.width, self.acs_width)
    }

    /// Kept columns outside the ACS block.
    pub fn non_acs_kept(&self) -> Vec<usize> {
        let acs: BTreeSet<usize> = self.acs().into_iter().collect();
        self.kept.iter().copied().filter(|c| !acs.contains(c)).collect()
    }

    /// Relocates `shift_pct` percent of the non-ACS kept columns to columns
    /// that are currently unsampled, preferring the highest frequencies.
    ///
    /// Which columns move, and where, is fixed by a permutation drawn from
    /// `stream`; a larger percentage moves a superset of the columns moved
    /// by a smaller one under the same stream.
    pub fn shifted(&self, shift_pct: f64, stream: &mut RngStream) -> Result<SamplingMask> {
        if !(0.0..=100.0).contains(&shift_pct) {
            return invalid(format!("shift percentage must lie in [0, 100], got {shift_pct}"));
        }
        let mut movable = self.non_acs_kept();
        stream.shuffle(&mut movable);

        let w = self.width;
        let mut free: Vec<usize> = (0..w).filter(|c| !self.is_kept(*c)).collect();
        stream.shuffle(&mut free);
        // Stable sort keeps the random order within a frequency band.
        free.sort_by_key(|&c| std::cmp::Reverse(frequency(c, w)));
        let high_band: Vec<usize> = free.iter().copied().filter(|&c| frequency(c, w) >= w / 4).collect();
        let targets = if high_band.len() >= movable.len() { high_band } else { free };

        let count = ((shift_pct / 100.0) * movable.len() as f64).round() as usize;
        let count = count.min(targets.len());
        let mut kept: BTreeSet<usize> = self.kept.iter().copied().collect();
        for (from, to) in movable.iter().zip(&targets).take(count) {
            kept.remove(from);
            kept.insert(*to);
        }
        Self::from_parts(
            self.height,
            self.width,
            kept.into_iter().collect(),
            self.acceleration,
            self.acs_width,
            self.seed,
        )
    }
}

/// Builds a Cartesian mask keeping `round(w / acceleration)` columns: the
/// ACS block plus randomly chosen columns, optionally followed by a shift.
pub fn make_cartesian_mask(
    height: usize,
    width: usize,
    acceleration: f64,
    acs_width: usize,
    shift_pct: f64,
    stream: &mut RngStream,
) -> Result<SamplingMask> {
    make_cartesian_mask_with(height, width, acceleration, acs_width, shift_pct, MaskLayout::Random, stream)
}

pub fn make_cartesian_mask_with(
    height: usize,
    width: usize,
    acceleration: f64,
    acs_width: usize,
    shift_pct: f64,
    layout: MaskLayout,
    stream: &mut RngStream,
) -> Result<SamplingMask> {
    check_dims(height, width)?;
    if !(acceleration >= 1.0) || !acceleration.is_finite() {
        return invalid(format!("acceleration must be >= 1, got {acceleration}"));
    }
    let total = ((width as f64) / acceleration).round() as usize;
    if acs_width == 0 || acs_width > total || acs_width > width {
        return invalid(format!(
            "infeasible column budget: {acs_width} ACS columns with {total} kept of {width}"
        ));
    }
    let acs = acs_columns(width, acs_width);
    let mut kept: BTreeSet<usize> = acs.iter().copied().collect();
    let mut candidates: Vec<usize> = (0..width).filter(|c| !kept.contains(c)).collect();
    let extra = total - acs_width;
    match layout {
        MaskLayout::Random => {
            stream.shuffle(&mut candidates);
            kept.extend(candidates.into_iter().take(extra));
        }
        MaskLayout::Equispaced => {
            if extra > 0 {
                let step = candidates.len() as f64 / extra as f64;
                kept.extend((0..extra).map(|k| candidates[(k as f64 * step).floor() as usize]));
            }
        }
    }
    let mask = SamplingMask::from_parts(
        height,
        width,
        kept.into_iter().collect(),
        acceleration,
        acs_width,
        stream.seed(),
    )?;
    if shift_pct > 0.0 {
        mask.shifted(shift_pct, stream)
    } else if shift_pct == 0.0 {
        Ok(mask)
    } else {
        invalid(format!("shift percentage must lie in [0, 100], got {shift_pct}"))
    }
}
