//! JSON configurations of the subcommands. Every field has a default so a
//! missing `--config` runs the toy setup.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use diffpure::autodiff::{AdamConfig, Architecture};
use diffpure::diffusion::{NoiseSchedule, SamplerConfig, ScoreTrainConfig};
use diffpure::metrics::PhantomSpec;
use diffpure::modl::{ModlConfig, TrainOptions};
use diffpure::perturbations::AttackConfig;
use diffpure::purification::{PstConfig, PurifyConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads `path` (or defaults) and returns the config with the directory
/// relative paths should resolve against.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, PathBuf)> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let cfg = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
        None => Ok((T::default(), PathBuf::new())),
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorSpec {
    pub coils: usize,
    pub acceleration: f64,
    /// Defaults to `max(4, width / 16)`.
    pub acs_width: Option<usize>,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self { coils: 4, acceleration: 4.0, acs_width: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataConfig {
    /// Shape settings; `count` and `seed` are replaced per split.
    pub phantoms: PhantomSpec,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub operator: OperatorSpec,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { phantoms: PhantomSpec::default(), train: 300, val: 20, test: 64, operator: OperatorSpec::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainScoreConfig {
    pub data: PathBuf,
    pub architecture: Architecture,
    pub schedule: NoiseSchedule,
    pub train: ScoreTrainConfig,
}

impl Default for TrainScoreConfig {
    fn default() -> Self {
        Self {
            data: "data/train".into(),
            architecture: Architecture::default_score(),
            schedule: NoiseSchedule::default(),
            train: ScoreTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainModlConfig {
    pub data: PathBuf,
    pub operator: PathBuf,
    pub architecture: Architecture,
    /// Warm start instead of a fresh initialization.
    pub init: Option<PathBuf>,
    pub modl: ModlConfig,
    pub train: TrainOptions,
}

impl Default for TrainModlConfig {
    fn default() -> Self {
        Self {
            data: "data/train".into(),
            operator: "data/operator".into(),
            architecture: Architecture::default_denoiser(),
            init: None,
            modl: ModlConfig::default(),
            train: TrainOptions { adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, ..TrainOptions::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub data: PathBuf,
    pub operator: PathBuf,
    pub init: PathBuf,
    pub score: PathBuf,
    pub schedule: NoiseSchedule,
    pub purify: PurifyConfig,
    /// Per-entry standard deviation of the k-space noise added before
    /// purification.
    pub sigma_ft: f64,
    pub modl: ModlConfig,
    pub train: TrainOptions,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            data: "data/train".into(),
            operator: "data/operator".into(),
            init: "models/modl.netp".into(),
            score: "models/score.netp".into(),
            schedule: NoiseSchedule::default(),
            purify: PurifyConfig::default(),
            sigma_ft: 0.01,
            modl: ModlConfig::default(),
            train: TrainOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AtTrainConfig {
    pub data: PathBuf,
    pub operator: PathBuf,
    pub architecture: Architecture,
    pub init: Option<PathBuf>,
    pub modl: ModlConfig,
    pub attack: AttackConfig,
    pub train: TrainOptions,
}

impl Default for AtTrainConfig {
    fn default() -> Self {
        Self {
            data: "data/train".into(),
            operator: "data/operator".into(),
            architecture: Architecture::default_denoiser(),
            init: None,
            modl: ModlConfig::default(),
            attack: AttackConfig { steps: 10, ..AttackConfig::default() },
            train: TrainOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Pgd,
    Momentum,
    EndToEnd,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackCmdConfig {
    pub data: PathBuf,
    pub operator: PathBuf,
    pub model: PathBuf,
    pub kind: AttackKind,
    /// Attack the ground truth instead of the clean reconstruction.
    pub ground_truth_reference: bool,
    pub score: Option<PathBuf>,
    pub schedule: NoiseSchedule,
    pub purify: PurifyConfig,
    pub modl: ModlConfig,
    pub attack: AttackConfig,
    pub max_images: Option<usize>,
}

impl Default for AttackCmdConfig {
    fn default() -> Self {
        Self {
            data: "data/test".into(),
            operator: "data/operator".into(),
            model: "models/modl.netp".into(),
            kind: AttackKind::Pgd,
            ground_truth_reference: false,
            score: None,
            schedule: NoiseSchedule::default(),
            purify: PurifyConfig::default(),
            modl: ModlConfig::default(),
            attack: AttackConfig::default(),
            max_images: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifyCmdConfig {
    pub data: PathBuf,
    pub operator: PathBuf,
    pub score: PathBuf,
    /// Output directory of a previous `attack` run whose perturbations are
    /// added to the measurements.
    pub deltas: Option<PathBuf>,
    /// Per-entry variance of random k-space noise added to the
    /// measurements.
    pub noise_variance: f64,
    pub schedule: NoiseSchedule,
    pub purify: PurifyConfig,
    pub max_images: Option<usize>,
}

impl Default for PurifyCmdConfig {
    fn default() -> Self {
        Self {
            data: "data/test".into(),
            operator: "data/operator".into(),
            score: "models/score.netp".into(),
            deltas: None,
            noise_variance: 0.0,
            schedule: NoiseSchedule::default(),
            purify: PurifyConfig::default(),
            max_images: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PstSelectConfig {
    pub clean: PathBuf,
    pub perturbed: PathBuf,
    pub schedule: NoiseSchedule,
    pub pst: PstConfig,
}

impl Default for PstSelectConfig {
    fn default() -> Self {
        Self {
            clean: "attack/clean".into(),
            perturbed: "attack/perturbed".into(),
            schedule: NoiseSchedule::default(),
            pst: PstConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub score: PathBuf,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            score: "models/score.netp".into(),
            schedule: NoiseSchedule::default(),
            sampler: SamplerConfig::default(),
            count: 4,
            height: 32,
            width: 32,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub schedule: NoiseSchedule,
    pub mixture_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { schedule: NoiseSchedule::default(), mixture_pairs: 5 }
    }
}
