//! Image-quality metrics, synthetic phantoms, dataset files and the
//! experiment harness.

mod dataset;
mod harness;
mod phantom;
mod quality;
mod report;

pub use dataset::{dataset_files, quantize, read_dataset, write_dataset};
pub use harness::{
    evaluate_scenario, run_experiment, scenario_operator, ExperimentConfig, Method, ModelPaths, Models, Pipeline,
    Scenario, ScenarioKind, SmoothingConfig, PLOT_HEADER, REPORT_HEADER, SUMMARY_HEADER, TABLE_HEADER,
};
pub use phantom::{gen_phantoms, PhantomFamily, PhantomSpec, EMPTY_BACKGROUND};
pub use quality::{psnr, ssim};
pub use report::{fmt_num, mean_std, median, plus_minus, EvalReport};
