use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forward_model::{make_cartesian_mask_with, ForwardOperator, MaskLayout};
use crate::numerics::RngStream;

/// A train/test forward-operator mismatch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChange {
    /// Regenerate the mask at a new acceleration factor.
    Acceleration(f64),
    /// Relocate this percentage of the non-ACS sampled columns.
    Shift(f64),
}

/// Same coil maps, perturbed sampling pattern.
pub fn perturb_operator(
    op: &ForwardOperator,
    change: OperatorChange,
    layout: MaskLayout,
    stream: &mut RngStream,
) -> Result<ForwardOperator> {
    let mask = op.mask();
    let new_mask = match change {
        OperatorChange::Acceleration(acc) => {
            make_cartesian_mask_with(mask.height(), mask.width(), acc, mask.acs_width(), 0.0, layout, stream)?
        }
        OperatorChange::Shift(pct) => mask.shifted(pct, stream)?,
    };
    ForwardOperator::new(new_mask, op.coils().clone())
}
