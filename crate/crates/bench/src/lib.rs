//! Fixtures shared by the benchmarks in `benches/`.

use std::sync::Arc;

use diffpure::autodiff::{Architecture, NetworkParams};
use diffpure::diffusion::{make_schedule, ScoreModel};
use diffpure::forward_model::{default_acs_width, make_cartesian_mask, make_coil_maps, ForwardOperator};
use diffpure::metrics::{gen_phantoms, PhantomSpec};
use diffpure::numerics::{ComplexImage, RngStream};

pub const SIZE: usize = 32;

pub fn phantom() -> ComplexImage {
    let spec = PhantomSpec { count: 1, height: SIZE, width: SIZE, ..PhantomSpec::default() };
    gen_phantoms(&spec).expect("valid spec").remove(0)
}

pub fn operator() -> Arc<ForwardOperator> {
    let mut s = RngStream::new(1, 0);
    let mask = make_cartesian_mask(SIZE, SIZE, 4.0, default_acs_width(SIZE), 0.0, &mut s).expect("mask");
    let maps = make_coil_maps(SIZE, SIZE, 4, &mut s).expect("maps");
    Arc::new(ForwardOperator::new(mask, maps).expect("operator"))
}

pub fn denoiser() -> NetworkParams {
    NetworkParams::init(Architecture::default_denoiser(), &mut RngStream::new(2, 0)).expect("init")
}

pub fn score_model() -> ScoreModel {
    let params = NetworkParams::init(Architecture::default_score(), &mut RngStream::new(3, 0)).expect("init");
    ScoreModel::learned(params, make_schedule(0.01, 20.0, 100).expect("schedule")).expect("score")
}
