use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::read_dataset;
use super::report::{fmt_num, plus_minus, EvalReport};
use crate::autodiff::{load_checkpoint, NetKind, NetworkParams};
use crate::diffusion::{make_schedule, NoiseSchedule, ScoreModel};
use crate::error::{invalid, Error, Result};
use crate::forward_model::{load_operator, ForwardOperator, KSpaceMeasurements, MaskLayout};
use crate::modl::{reconstruct, reconstruct_purified, rs_reconstruct, ModlConfig};
use crate::numerics::{ComplexImage, RngStream};
use crate::perturbations::{
    e2e_attack, momentum_attack, perturb_operator, pgd_attack, random_perturb, AttackConfig, AttackTarget,
    OperatorChange,
};
use crate::purification::{purify, PurifyConfig};

/// Reconstruction pipelines compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    At,
    RsE2e,
    Dp,
    DpFt,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Vanilla, Method::At, Method::RsE2e, Method::Dp, Method::DpFt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::At => "at",
            Method::RsE2e => "rs_e2e",
            Method::Dp => "dp",
            Method::DpFt => "dp_ft",
        }
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }

    fn purifies(self) -> bool {
        matches!(self, Method::Dp | Method::DpFt)
    }
}

/// Checkpoint paths. Relative paths resolve against the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub vanilla: PathBuf,
    #[serde(default)]
    pub at: Option<PathBuf>,
    /// MoDL used by randomized smoothing (defaults to `vanilla`).
    #[serde(default)]
    pub rs: Option<PathBuf>,
    #[serde(default)]
    pub fine_tuned: Option<PathBuf>,
    #[serde(default)]
    pub score: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    /// Per-entry standard deviation of the k-space smoothing noise.
    pub noise_std: f64,
    pub samples: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { noise_std: 0.01, samples: 8 }
    }
}

/// How the test measurements are disturbed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    Clean,
    /// Complex Gaussian k-space noise of the given per-entry variance.
    Random { variance: f64 },
    /// PGD against the MoDL network of each method.
    Pgd { attack: AttackConfig },
    Momentum { attack: AttackConfig },
    /// Attack through purification for purifying methods, PGD otherwise.
    EndToEnd { attack: AttackConfig },
    /// Test operator at a different acceleration.
    Acceleration { factor: f64 },
    /// Test operator with this percentage of sampled columns relocated.
    Shift { percent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    /// Sweep this scenario belongs to, with its abscissa.
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub x: Option<f64>,
    /// Overrides the switching step of the purifying methods.
    #[serde(default)]
    pub pst_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub test_data: PathBuf,
    pub operator: PathBuf,
    pub models: ModelPaths,
    #[serde(default)]
    pub max_images: Option<usize>,
    #[serde(default)]
    pub schedule: Option<NoiseSchedule>,
    #[serde(default)]
    pub modl: ModlConfig,
    #[serde(default)]
    pub purify: PurifyConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.test_data);
        fix(&mut self.operator);
        fix(&mut self.models.vanilla);
        for p in [&mut self.models.at, &mut self.models.rs, &mut self.models.fine_tuned, &mut self.models.score]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn required_paths(&self) -> Vec<(&'static str, Option<&PathBuf>)> {
        let mut v = vec![
            ("test_data", Some(&self.test_data)),
            ("operator", Some(&self.operator)),
            ("models.vanilla", Some(&self.models.vanilla)),
        ];
        for m in &self.methods {
            match m {
                Method::At => v.push(("models.at", self.models.at.as_ref())),
                Method::DpFt => {
                    v.push(("models.fine_tuned", self.models.fine_tuned.as_ref()));
                    v.push(("models.score", self.models.score.as_ref()));
                }
                Method::Dp => v.push(("models.score", self.models.score.as_ref())),
                Method::RsE2e | Method::Vanilla => {}
            }
        }
        if let Some(p) = &self.models.rs {
            v.push(("models.rs", Some(p)));
        }
        v
    }

    /// Fails before any computation if a referenced artifact is missing.
    pub fn check_artifacts(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (what, p) in self.required_paths() {
            match p {
                None => problems.push(format!("{what} is required by the selected methods")),
                Some(p) if !p.exists() => problems.push(format!("{what} not found at {}", p.display())),
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            invalid(format!("missing experiment artifacts: {}", problems.join("; ")))
        }
    }
}

/// Loaded models, shared immutably across evaluations.
pub struct Models {
    pub vanilla: NetworkParams,
    pub at: Option<NetworkParams>,
    pub rs: Option<NetworkParams>,
    pub fine_tuned: Option<NetworkParams>,
    pub score: Option<ScoreModel>,
}

impl Models {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let denoiser = |p: &PathBuf| -> Result<NetworkParams> {
            let n = load_checkpoint(p)?;
            if n.arch().kind != NetKind::Denoiser {
                return invalid(format!("{} is not a denoiser checkpoint", p.display()));
            }
            Ok(n)
        };
        let schedule = match cfg.schedule {
            Some(s) => make_schedule(s.sigma_l(), s.sigma_u(), s.len())?,
            None => NoiseSchedule::default(),
        };
        let score = match &cfg.models.score {
            Some(p) => Some(ScoreModel::learned(load_checkpoint(p)?, schedule)?),
            None => None,
        };
        Ok(Self {
            vanilla: denoiser(&cfg.models.vanilla)?,
            at: cfg.models.at.as_ref().map(denoiser).transpose()?,
            rs: cfg.models.rs.as_ref().map(denoiser).transpose()?,
            fine_tuned: cfg.models.fine_tuned.as_ref().map(denoiser).transpose()?,
            score,
        })
    }

    /// The MoDL network a method reconstructs with.
    pub fn network(&self, m: Method) -> Result<&NetworkParams> {
        let missing = || Error::InvalidInput(format!("no model loaded for method {}", m.name()));
        Ok(match m {
            Method::Vanilla | Method::Dp => &self.vanilla,
            Method::At => self.at.as_ref().ok_or_else(missing)?,
            Method::RsE2e => self.rs.as_ref().unwrap_or(&self.vanilla),
            Method::DpFt => self.fine_tuned.as_ref().ok_or_else(missing)?,
        })
    }

    pub fn score(&self) -> Result<&ScoreModel> {
        self.score.as_ref().ok_or_else(|| Error::InvalidInput("no score model loaded".into()))
    }
}

/// Everything needed to run one method on one measurement set.
pub struct Pipeline<'a> {
    pub models: &'a Models,
    pub modl: ModlConfig,
    pub purify: PurifyConfig,
    pub smoothing: SmoothingConfig,
}

impl Pipeline<'_> {
    pub fn reconstruct(
        &self,
        method: Method,
        op: &Arc<ForwardOperator>,
        y: &KSpaceMeasurements,
        stream: &mut RngStream,
    ) -> Result<ComplexImage> {
        let net = self.models.network(method)?;
        match method {
            Method::Vanilla | Method::At => reconstruct(net, op, y, &self.modl),
            Method::RsE2e => rs_reconstruct(net, op, y, &self.modl, self.smoothing.noise_std, self.smoothing.samples, stream),
            Method::Dp | Method::DpFt => {
                let z = purify(self.models.score()?, y, op, &self.purify, stream)?;
                reconstruct_purified(net, op, &z, &self.modl)
            }
        }
    }

    /// The disturbed measurements a method sees under `kind`.
    pub fn disturb(
        &self,
        method: Method,
        kind: &ScenarioKind,
        op: &Arc<ForwardOperator>,
        y: &KSpaceMeasurements,
        shared: &mut RngStream,
        own: &mut RngStream,
    ) -> Result<KSpaceMeasurements> {
        let net = self.models.network(method)?;
        let modl_only = |a: &AttackConfig| AttackConfig { target: AttackTarget::ModlOnly, ..*a };
        Ok(match kind {
            ScenarioKind::Clean | ScenarioKind::Acceleration { .. } | ScenarioKind::Shift { .. } => y.clone(),
            ScenarioKind::Random { variance } => random_perturb(y, *variance, shared)?.apply(y)?,
            ScenarioKind::Pgd { attack } => pgd_attack(net, op, y, &self.modl, &modl_only(attack), own)?.apply(y)?,
            ScenarioKind::Momentum { attack } => {
                momentum_attack(net, op, y, &self.modl, &modl_only(attack), own)?.apply(y)?
            }
            ScenarioKind::EndToEnd { attack } if method.purifies() => {
                let a = AttackConfig { target: AttackTarget::EndToEnd, ..*attack };
                e2e_attack(net, self.models.score()?, op, y, &self.purify, &self.modl, &a, own)?.apply(y)?
            }
            ScenarioKind::EndToEnd { attack } => pgd_attack(net, op, y, &self.modl, &modl_only(attack), own)?.apply(y)?,
        })
    }
}

/// Test operator of a scenario; mismatches draw from `stream`.
pub fn scenario_operator(
    op: &Arc<ForwardOperator>,
    kind: &ScenarioKind,
    stream: &mut RngStream,
) -> Result<Arc<ForwardOperator>> {
    Ok(match kind {
        ScenarioKind::Acceleration { factor } => {
            Arc::new(perturb_operator(op, OperatorChange::Acceleration(*factor), MaskLayout::Random, stream)?)
        }
        ScenarioKind::Shift { percent } => {
            Arc::new(perturb_operator(op, OperatorChange::Shift(*percent), MaskLayout::Random, stream)?)
        }
        _ => op.clone(),
    })
}

/// Evaluates one method on one scenario. Image `k` uses
/// `stream.child(k)`: draw 0 feeds shared perturbations, draw `1 + code`
/// feeds the method's attack and sampling noise.
pub fn evaluate_scenario(
    pipeline: &Pipeline<'_>,
    scenario: &Scenario,
    method: Method,
    op: &Arc<ForwardOperator>,
    images: &[ComplexImage],
    stream: &RngStream,
) -> Result<EvalReport> {
    let mut p = Pipeline { models: pipeline.models, modl: pipeline.modl, purify: pipeline.purify, smoothing: pipeline.smoothing };
    if let Some(step) = scenario.pst_step {
        p.purify.pst_step = step;
    }
    let recons: Vec<ComplexImage> = images
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let s = stream.child(k as u64);
            let mut shared = s.child(0);
            let mut own = s.child(method.code());
            let y = op.forward(x)?;
            let y_in = p.disturb(method, &scenario.kind, op, &y, &mut shared, &mut own)?;
            p.reconstruct(method, op, &y_in, &mut own)
        })
        .collect::<Result<_>>()?;
    EvalReport::score(scenario.name.clone(), method.name(), &recons, images)
}

/// Output file headers.
pub const SUMMARY_HEADER: &str =
    "scenario,group,x,method,images,psnr_mean,psnr_std,psnr_median,ssim_mean,ssim_std,ssim_median";
pub const TABLE_HEADER: &str = "method,scenario,psnr,ssim";
pub const REPORT_HEADER: &str = "method,image,psnr,ssim";
pub const PLOT_HEADER: &str = "x,method,psnr_mean,psnr_std,psnr_median,ssim_mean,ssim_std,ssim_median";

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// Runs every scenario for every method and writes `summary.csv`,
/// `table.csv` (baselines as deltas against vanilla), one
/// `reports/<scenario>.csv` per scenario and one `plot_<group>.csv` per
/// sweep into `out`. All randomness derives from `seed`.
pub fn run_experiment(cfg: &ExperimentConfig, out: impl AsRef<Path>, seed: u64) -> Result<Vec<EvalReport>> {
    cfg.check_artifacts()?;
    let mut names = std::collections::BTreeSet::new();
    for s in &cfg.scenarios {
        if !names.insert(&s.name) {
            return invalid(format!("duplicate scenario name {:?}", s.name));
        }
    }
    let out = out.as_ref();
    fs::create_dir_all(out.join("reports"))?;
    let models = Models::load(cfg)?;
    let op = Arc::new(load_operator(&cfg.operator)?);
    let mut images = read_dataset(&cfg.test_data)?;
    if let Some(n) = cfg.max_images {
        images.truncate(n);
    }
    if images.is_empty() && !cfg.scenarios.is_empty() {
        return invalid(format!("no test images in {}", cfg.test_data.display()));
    }
    let pipeline = Pipeline { models: &models, modl: cfg.modl, purify: cfg.purify, smoothing: cfg.smoothing };
    let base = RngStream::new(seed, 0);
    let mut reports = Vec::new();
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut table = format!("{TABLE_HEADER}\n");
    let mut plots: BTreeMap<String, String> = BTreeMap::new();
    for (si, sc) in cfg.scenarios.iter().enumerate() {
        let scen_stream = base.child(si as u64);
        let test_op = scenario_operator(&op, &sc.kind, &mut scen_stream.child(u64::MAX))?;
        let mut rows = format!("{REPORT_HEADER}\n");
        let mut by_method = Vec::new();
        for &m in &cfg.methods {
            info!("scenario {} / {}", sc.name, m.name());
            let r = evaluate_scenario(&pipeline, sc, m, &test_op, &images, &scen_stream)?;
            r.rows_csv(&mut rows);
            let (pm, ps) = r.psnr_stats();
            let (sm, ss) = r.ssim_stats();
            let (group, x) = (sc.group.clone().unwrap_or_default(), sc.x.map(fmt_num).unwrap_or_default());
            writeln!(
                summary,
                "{},{group},{x},{},{},{},{},{},{},{},{}",
                sc.name,
                m.name(),
                r.len(),
                fmt_num(pm),
                fmt_num(ps),
                fmt_num(r.psnr_median()),
                fmt_num(sm),
                fmt_num(ss),
                fmt_num(r.ssim_median())
            )
            .unwrap();
            if let Some(g) = &sc.group {
                let plot = plots.entry(g.clone()).or_insert_with(|| format!("{PLOT_HEADER}\n"));
                writeln!(
                    plot,
                    "{x},{},{},{},{},{},{},{}",
                    m.name(),
                    fmt_num(pm),
                    fmt_num(ps),
                    fmt_num(r.psnr_median()),
                    fmt_num(sm),
                    fmt_num(ss),
                    fmt_num(r.ssim_median())
                )
                .unwrap();
            }
            by_method.push((m, r));
        }
        let vanilla = by_method.iter().find(|(m, _)| *m == Method::Vanilla).map(|(_, r)| r.clone());
        for (m, r) in &by_method {
            let (p, s) = match (&vanilla, m) {
                (Some(v), m) if *m != Method::Vanilla => {
                    let (dp, ds) = r.deltas(v)?;
                    (plus_minus(&dp, 2, true), plus_minus(&ds, 3, true))
                }
                _ => (plus_minus(&r.psnr, 2, false), plus_minus(&r.ssim, 3, false)),
            };
            writeln!(table, "{},{},{p},{s}", m.name(), sc.name).unwrap();
        }
        fs::write(out.join("reports").join(format!("{}.csv", safe_name(&sc.name))), rows)?;
        reports.extend(by_method.into_iter().map(|(_, r)| r));
    }
    fs::write(out.join("summary.csv"), summary)?;
    fs::write(out.join("table.csv"), table)?;
    for (g, text) in plots {
        fs::write(out.join(format!("plot_{}.csv", safe_name(&g))), text)?;
    }
    Ok(reports)
}
