//! Diffusion purification of perturbed measurements, the empirical MMD
//! between clean and perturbed image sets, and switching-step selection.

mod mmd;
mod purify;

pub use mmd::{
    bandwidth, default_bandwidth, mmd, select_pst, BandwidthRule, NoiseCoupling, PstConfig, PstSelection,
    SampleSets,
};
pub use purify::{freeze_purification_noise, purify, purify_on_tape, purify_with_dc_target, PurifyConfig};
