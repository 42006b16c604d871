//! The undersampled multi-coil Fourier operator `A = M F S`, its adjoint,
//! and the two data-consistency updates used by MoDL and the sampler.

mod coils;
mod io;
mod mask;
mod operator;

pub use coils::{make_coil_maps, CoilSensitivities};
pub use io::{
    load_operator, read_mask_csv, read_measurements, save_operator, write_mask_csv, write_measurements,
    MeasurementManifest,
};
pub use mask::{default_acs_width, make_cartesian_mask, make_cartesian_mask_with, MaskLayout, SamplingMask};
pub use operator::{ForwardOperator, KSpaceMeasurements};
