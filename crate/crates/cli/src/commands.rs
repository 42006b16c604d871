use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use diffpure::autodiff::{load_checkpoint, save_checkpoint, NetworkParams};
use diffpure::diffusion::{make_schedule, pc_sample_dc, train_score as fit_score, NoiseSchedule, SamplerInit, ScoreModel};
use diffpure::forward_model::{
    default_acs_width, load_operator, make_cartesian_mask, make_coil_maps, read_measurements, save_operator,
    write_measurements, ForwardOperator,
};
use diffpure::metrics::{fmt_num, gen_phantoms, psnr, read_dataset, run_experiment, write_dataset, ExperimentConfig, PhantomSpec};
use diffpure::modl::{self, TrainingSet};
use diffpure::numerics::{write_cimg_file, ComplexImage, RngStream};
use diffpure::perturbations::{
    e2e_attack, momentum_attack, pgd_attack_with_reference, random_perturb, AttackTarget, Perturbation,
};
use diffpure::purification::{self, select_pst, SampleSets};
use diffpure::theory;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::*;

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn load<T: serde::de::DeserializeOwned + Default>(&self) -> Result<(T, PathBuf)> {
        load(self.config.as_deref())
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }
}

fn schedule(s: &NoiseSchedule) -> Result<NoiseSchedule> {
    Ok(make_schedule(s.sigma_l(), s.sigma_u(), s.len())?)
}

fn operator(base: &Path, p: &Path) -> Result<Arc<ForwardOperator>> {
    let p = resolve(base, p);
    Ok(Arc::new(load_operator(&p).with_context(|| format!("loading operator {}", p.display()))?))
}

fn dataset(base: &Path, p: &Path, max: Option<usize>) -> Result<Vec<ComplexImage>> {
    let p = resolve(base, p);
    let mut imgs = read_dataset(&p).with_context(|| format!("reading dataset {}", p.display()))?;
    if let Some(n) = max {
        imgs.truncate(n);
    }
    if imgs.is_empty() {
        bail!("dataset {} is empty", p.display());
    }
    Ok(imgs)
}

fn checkpoint(base: &Path, p: &Path) -> Result<NetworkParams> {
    let p = resolve(base, p);
    load_checkpoint(&p).with_context(|| format!("loading checkpoint {}", p.display()))
}

fn score_model(base: &Path, p: &Path, sched: &NoiseSchedule) -> Result<ScoreModel> {
    Ok(ScoreModel::learned(checkpoint(base, p)?, schedule(sched)?)?)
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        writeln!(s, "{e},{}", fmt_num(*l))?;
    }
    fs::write(path, s)?;
    Ok(())
}

fn image_name(k: usize) -> String {
    format!("img_{k:05}")
}

fn write_image(dir: &Path, k: usize, img: &ComplexImage) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_cimg_file(dir.join(format!("{}.cimg", image_name(k))), img.height(), img.width(), img.data())?;
    Ok(())
}

fn split_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k.wrapping_mul(0xbf58_476d_1ce4_e5b9)).rotate_left(17)
}

pub fn gen_data(ctx: &Context) -> Result<bool> {
    let (cfg, _) = ctx.load::<GenDataConfig>()?;
    let out = ctx.out_dir()?;
    for (k, (name, count)) in [("train", cfg.train), ("val", cfg.val), ("test", cfg.test)].into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        let spec = PhantomSpec { count, seed: split_seed(ctx.seed, k as u64), ..cfg.phantoms.clone() };
        write_dataset(out.join(name), &gen_phantoms(&spec)?)?;
        info!("wrote {count} {name} phantoms");
    }
    let (h, w) = (cfg.phantoms.height, cfg.phantoms.width);
    let mut s = RngStream::new(ctx.seed, 1);
    let acs = cfg.operator.acs_width.unwrap_or_else(|| default_acs_width(w));
    let mask = make_cartesian_mask(h, w, cfg.operator.acceleration, acs, 0.0, &mut s)?;
    let maps = make_coil_maps(h, w, cfg.operator.coils, &mut s)?;
    save_operator(out.join("operator"), &ForwardOperator::new(mask, maps)?)?;
    Ok(true)
}

pub fn train_score(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<TrainScoreConfig>()?;
    let images = dataset(&base, &cfg.data, None)?;
    let sched = schedule(&cfg.schedule)?;
    let init = NetworkParams::init(cfg.architecture.clone(), &mut ctx.stream().child(0))?;
    let outcome = fit_score(init, &images, &sched, &cfg.train, &mut ctx.stream().child(1))?;
    let out = ctx.out_dir()?;
    save_checkpoint(out.join("score.netp"), outcome.model.params().expect("learned model"))?;
    write_losses(&out.join("score_loss.csv"), &outcome.losses)?;
    Ok(true)
}

fn init_or_load(base: &Path, init: &Option<PathBuf>, arch: &diffpure::autodiff::Architecture, seed: &RngStream) -> Result<NetworkParams> {
    match init {
        Some(p) => checkpoint(base, p),
        None => Ok(NetworkParams::init(arch.clone(), &mut seed.child(0))?),
    }
}

pub fn train_modl(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<TrainModlConfig>()?;
    let op = operator(&base, &cfg.operator)?;
    let set = TrainingSet::simulate(op, &dataset(&base, &cfg.data, None)?)?;
    let init = init_or_load(&base, &cfg.init, &cfg.architecture, &ctx.stream())?;
    let outcome = modl::train(init, &set, &cfg.modl, &cfg.train, &mut ctx.stream().child(1))?;
    let out = ctx.out_dir()?;
    save_checkpoint(out.join("modl.netp"), &outcome.params)?;
    write_losses(&out.join("modl_loss.csv"), &outcome.losses)?;
    Ok(true)
}

pub fn fine_tune(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<FineTuneConfig>()?;
    let op = operator(&base, &cfg.operator)?;
    let set = TrainingSet::simulate(op, &dataset(&base, &cfg.data, None)?)?;
    let score = score_model(&base, &cfg.score, &cfg.schedule)?;
    let init = checkpoint(&base, &cfg.init)?;
    let outcome =
        modl::fine_tune(init, &set, &score, &cfg.purify, cfg.sigma_ft, &cfg.modl, &cfg.train, &mut ctx.stream().child(1))?;
    let out = ctx.out_dir()?;
    save_checkpoint(out.join("modl_ft.netp"), &outcome.params)?;
    write_losses(&out.join("fine_tune_loss.csv"), &outcome.losses)?;
    Ok(true)
}

pub fn at_train(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<AtTrainConfig>()?;
    let op = operator(&base, &cfg.operator)?;
    let set = TrainingSet::simulate(op, &dataset(&base, &cfg.data, None)?)?;
    let init = init_or_load(&base, &cfg.init, &cfg.architecture, &ctx.stream())?;
    let outcome = modl::at_train(init, &set, &cfg.modl, &cfg.attack, &cfg.train, &mut ctx.stream().child(1))?;
    let out = ctx.out_dir()?;
    save_checkpoint(out.join("modl_at.netp"), &outcome.params)?;
    write_losses(&out.join("at_loss.csv"), &outcome.losses)?;
    Ok(true)
}

#[derive(Serialize)]
struct AttackManifest {
    kind: AttackKind,
    epsilon: f64,
    steps: usize,
    alpha: f64,
    seed: u64,
    image: usize,
    initial_loss: f64,
    loss: f64,
    linf: f64,
}

pub fn attack(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<AttackCmdConfig>()?;
    let op = operator(&base, &cfg.operator)?;
    let images = dataset(&base, &cfg.data, cfg.max_images)?;
    let net = checkpoint(&base, &cfg.model)?;
    let score = match (&cfg.kind, &cfg.score) {
        (AttackKind::EndToEnd, Some(p)) => Some(score_model(&base, p, &cfg.schedule)?),
        (AttackKind::EndToEnd, None) => bail!("end-to-end attacks need a score checkpoint"),
        _ => None,
    };
    let root = ctx.stream();
    let deltas: Vec<Perturbation> = images
        .par_iter()
        .enumerate()
        .map(|(k, x)| -> Result<Perturbation> {
            let y = op.forward(x)?;
            let mut s = root.child(k as u64);
            let reference = cfg.ground_truth_reference.then_some(x);
            Ok(match cfg.kind {
                AttackKind::Pgd => {
                    let a = diffpure::perturbations::AttackConfig { target: AttackTarget::ModlOnly, ..cfg.attack };
                    pgd_attack_with_reference(&net, &op, &y, &cfg.modl, &a, reference, &mut s)?
                }
                AttackKind::Momentum => {
                    let a = diffpure::perturbations::AttackConfig { target: AttackTarget::ModlOnly, ..cfg.attack };
                    momentum_attack(&net, &op, &y, &cfg.modl, &a, &mut s)?
                }
                AttackKind::EndToEnd => {
                    let a = diffpure::perturbations::AttackConfig { target: AttackTarget::EndToEnd, ..cfg.attack };
                    e2e_attack(&net, score.as_ref().unwrap(), &op, &y, &cfg.purify, &cfg.modl, &a, &mut s)?
                }
            })
        })
        .collect::<Result<_>>()?;
    let out = ctx.out_dir()?;
    let mut summary = String::from("image,epsilon,steps,alpha,initial_loss,loss,linf\n");
    for (k, (x, d)) in images.iter().zip(&deltas).enumerate() {
        let dir = out.join("deltas").join(image_name(k));
        write_measurements(&dir, &d.delta)?;
        let trace = d.trace.as_ref().expect("attacks record a trace");
        let manifest = AttackManifest {
            kind: cfg.kind.clone(),
            epsilon: cfg.attack.epsilon,
            steps: cfg.attack.steps,
            alpha: cfg.attack.alpha(),
            seed: ctx.seed,
            image: k,
            initial_loss: trace.losses[0],
            loss: trace.best_loss,
            linf: d.linf(),
        };
        fs::write(dir.join("attack.json"), serde_json::to_string_pretty(&manifest)?)?;
        let y = op.forward(x)?;
        write_image(&out.join("clean"), k, &op.adjoint(&y)?)?;
        write_image(&out.join("perturbed"), k, &op.adjoint(&d.apply(&y)?)?)?;
        writeln!(
            summary,
            "{k},{},{},{},{},{},{}",
            fmt_num(cfg.attack.epsilon),
            cfg.attack.steps,
            fmt_num(cfg.attack.alpha()),
            fmt_num(trace.losses[0]),
            fmt_num(trace.best_loss),
            fmt_num(d.linf())
        )?;
    }
    fs::write(out.join("attack_summary.csv"), summary)?;
    Ok(true)
}

pub fn purify(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<PurifyCmdConfig>()?;
    let op = operator(&base, &cfg.operator)?;
    let images = dataset(&base, &cfg.data, cfg.max_images)?;
    let score = score_model(&base, &cfg.score, &cfg.schedule)?;
    let deltas = cfg.deltas.as_ref().map(|d| resolve(&base, d));
    let root = ctx.stream();
    let rows: Vec<(ComplexImage, f64, f64)> = images
        .par_iter()
        .enumerate()
        .map(|(k, x)| -> Result<(ComplexImage, f64, f64)> {
            let s = root.child(k as u64);
            let mut y = op.forward(x)?;
            if let Some(dir) = &deltas {
                y = y.add(&read_measurements(dir.join("deltas").join(image_name(k)), &op)?)?;
            }
            if cfg.noise_variance > 0.0 {
                y = random_perturb(&y, cfg.noise_variance, &mut s.child(0))?.apply(&y)?;
            }
            let z = purification::purify(&score, &y, &op, &cfg.purify, &mut s.child(1))?;
            Ok((z.clone(), psnr(&op.adjoint(&y)?, x)?, psnr(&z, x)?))
        })
        .collect::<Result<_>>()?;
    let out = ctx.out_dir()?;
    let mut summary = String::from("image,psnr_adjoint,psnr_purified\n");
    for (k, (z, pa, pp)) in rows.iter().enumerate() {
        write_image(&out.join("purified"), k, z)?;
        writeln!(summary, "{k},{},{}", fmt_num(*pa), fmt_num(*pp))?;
    }
    fs::write(out.join("purify_summary.csv"), summary)?;
    Ok(true)
}

#[derive(Serialize)]
struct PstManifest {
    step: usize,
    found: bool,
    bandwidth: f64,
    tau: f64,
}

pub fn pst_select(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<PstSelectConfig>()?;
    let sets = SampleSets::new(dataset(&base, &cfg.clean, None)?, dataset(&base, &cfg.perturbed, None)?)?;
    let sched = schedule(&cfg.schedule)?;
    let sel = select_pst(&sets, &sched, &cfg.pst, &ctx.stream())?;
    let out = ctx.out_dir()?;
    let mut csv = String::from("step,mmd\n");
    for (i, m) in &sel.trajectory {
        writeln!(csv, "{i},{m:e}")?;
    }
    fs::write(out.join("pst_trajectory.csv"), csv)?;
    let manifest = PstManifest { step: sel.step, found: sel.found, bandwidth: sel.bandwidth, tau: cfg.pst.tau };
    fs::write(out.join("pst_selection.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("selected step {} (threshold met: {})", sel.step, sel.found);
    Ok(true)
}

pub fn sample(ctx: &Context) -> Result<bool> {
    let (cfg, base) = ctx.load::<SampleConfig>()?;
    let score = score_model(&base, &cfg.score, &cfg.schedule)?;
    let top = score.schedule.len() - 1;
    let root = ctx.stream();
    let samples: Vec<ComplexImage> = (0..cfg.count)
        .into_par_iter()
        .map(|k| {
            let init = SamplerInit::Prior { height: cfg.height, width: cfg.width };
            pc_sample_dc(&score, None, top, 0, &cfg.sampler, &mut root.child(k as u64), init)
        })
        .collect::<diffpure::Result<_>>()?;
    write_dataset(ctx.out_dir()?.join("samples"), &samples)?;
    Ok(true)
}

pub fn evaluate(ctx: &Context) -> Result<bool> {
    let Some(path) = &ctx.config else {
        bail!("evaluate needs --config <experiment.json>");
    };
    let mut cfg = ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
    let reports = run_experiment(&cfg, &ctx.out, ctx.seed)?;
    for r in &reports {
        let (p, s) = (r.psnr_stats(), r.ssim_stats());
        println!("{:<24} {:<8} PSNR {:>7.2}±{:.2}  SSIM {:.3}±{:.3}", r.scenario, r.method, p.0, p.1, s.0, s.1);
    }
    Ok(true)
}

pub fn verify_theorem(ctx: &Context) -> Result<bool> {
    let (cfg, _) = ctx.load::<VerifyConfig>()?;
    let sched = schedule(&cfg.schedule)?;
    let report = theory::verify_theorem(&sched, cfg.mixture_pairs, &mut ctx.stream())?;
    let out = ctx.out_dir()?;
    for (name, trace) in &report.traces {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        fs::write(out.join(format!("theorem_{name}.csv")), buf)?;
    }
    let mut csv = String::from("check,passed,measured,tolerance\n");
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} measured={:e} tolerance={:e}", c.name, c.measured, c.tolerance);
        writeln!(csv, "{},{},{:e},{:e}", c.name, c.passed, c.measured, c.tolerance)?;
    }
    fs::write(out.join("theorem_checks.csv"), csv)?;
    Ok(report.all_passed())
}
