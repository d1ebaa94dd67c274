//! Experiment dispatch and artifact writing.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::json;

use entangle_core::cfn::CfnModel;
use entangle_core::checkpoint::{save_checkpoint, write_atomic};
use entangle_core::experiments::{pretrain, retrain, run_disentanglement_experiment, run_ffn_experiment, FfnBaseline};
use entangle_core::gradcheck::gradient_suite;
use entangle_core::log::ExperimentLog;
use entangle_core::vae::{dump_images, sweep, train_vae, SceneParams, Transform, VaeDiagnostics, VaeModel};
use entangle_core::{count_params, ParamStore, Tensor};

use crate::config::{Experiment, RunConfig};

pub const VERSION: &str = env!("ENTANGLE_VERSION");
pub const GRAD_TOLERANCE: f64 = 1e-4;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn stem(&self) -> String {
        format!("{}-{}", self.cfg.experiment, self.cfg.seed())
    }

    fn write_log(&self, log: &ExperimentLog) -> Result<()> {
        log.write_files(&self.dir, self.cfg.experiment.name(), self.cfg.seed())?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, suffix: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        write_atomic(&self.dir.join(format!("{}.{suffix}.json", self.stem())), text.as_bytes())?;
        Ok(())
    }

    fn checkpoint<C: Serialize>(&self, tag: &str, store: &ParamStore, config: &C) -> Result<()> {
        let path = self.dir.join(format!("{}.{tag}.checkpoint.json", self.stem()));
        save_checkpoint(store, config, &path)?;
        Ok(())
    }
}

/// Runs the configured experiment, writing artifacts under `dir` and a
/// human-readable summary to `out`. Does not write the manifest.
pub fn run_experiment(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut ctx = Ctx {
        cfg,
        dir: dir.to_path_buf(),
        out,
    };
    match cfg.experiment {
        Experiment::TrainCfn => train_cfn(&mut ctx, true),
        Experiment::TrainCfnBaseline => train_cfn(&mut ctx, false),
        Experiment::TrainFfn => train_ffn(&mut ctx),
        Experiment::Forgetting => forgetting(&mut ctx),
        Experiment::TrainVae => train_vae_run(&mut ctx),
        Experiment::GradCheck => grad_check(&mut ctx),
        Experiment::ParamsReport => params_report(&mut ctx),
    }
}

fn train_cfn(ctx: &mut Ctx, sharpen: bool) -> Result<()> {
    let cfg = ctx.cfg;
    let run = run_disentanglement_experiment(&cfg.cfn, &cfg.train, sharpen, cfg.steps, cfg.seed())?;
    ctx.write_log(&run.log)?;
    ctx.checkpoint("cfn", &run.model.params, &run.model.config)?;
    writeln!(ctx.out, "final validation loss {:.6e}", run.final_loss)?;
    writeln!(ctx.out, "final disentanglement {:.4}", run.final_disentanglement)?;
    writeln!(ctx.out, "constant predictor loss {:.6e}", run.constant_baseline_loss)?;
    Ok(())
}

fn train_ffn(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (model, log) = run_ffn_experiment(&cfg.ffn, &cfg.train, cfg.steps, cfg.seed())?;
    ctx.write_log(&log)?;
    ctx.checkpoint("ffn", &model.params, &model.config)?;
    writeln!(ctx.out, "final validation loss {:.6e}", log.last("val_loss").unwrap_or(f64::NAN))?;
    Ok(())
}

fn forgetting(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let pre = pretrain(&cfg.cfn, &cfg.ffn, &cfg.train, &cfg.forgetting, cfg.seed())?;
    ctx.checkpoint("cfn", &pre.cfn.params, &pre.cfn.config)?;
    ctx.checkpoint("ffn", &pre.ffn.params, &pre.ffn.config)?;
    writeln!(
        ctx.out,
        "pre-trained cfn for {} steps (val {:.4e}), ffn for {} steps (val {:.4e})",
        pre.cfn_steps, pre.cfn_val_loss, pre.ffn_steps, pre.ffn_val_loss
    )?;
    let mut log = ExperimentLog::new();
    log.extend_prefixed("pretrain/", &pre.log);
    let mut reports = Vec::new();
    writeln!(ctx.out, "task         cfn growth  ffn growth  cfn off-function mass")?;
    for &task in &cfg.retrain_tasks {
        let (c, f) = retrain(&pre, task, &cfg.train, &cfg.forgetting, cfg.seed())?;
        log.extend_prefixed(&format!("{task}/"), &c.to_log());
        log.extend_prefixed(&format!("{task}/"), &f.to_log());
        writeln!(
            ctx.out,
            "{:<12} {:>10.3} {:>11.3} {:>22.5}",
            task.name(),
            c.growth(),
            f.growth(),
            c.off_function_mass.unwrap_or(f64::NAN)
        )?;
        reports.push(c);
        reports.push(f);
    }
    ctx.write_log(&log)?;
    ctx.write_json("reports", &reports)?;
    Ok(())
}

fn train_vae_run(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let mut model = VaeModel::new(cfg.vae.clone(), cfg.seed())?;
    let log = train_vae(&mut model, cfg.steps, cfg.seed(), cfg.vae.ratio, &cfg.vae_opt)?;
    ctx.write_log(&log)?;
    ctx.checkpoint("vae", &model.params, &model.config)?;

    let diag = VaeDiagnostics::compute(&model, cfg.seed(), 8, 64)?;
    ctx.write_json("diagnostics", &diag)?;
    for (i, t) in Transform::EXTRINSIC.into_iter().enumerate() {
        writeln!(
            ctx.out,
            "{t}: slot variance ratio {:.2}, designated slot wins {}/{} sweeps",
            diag.slot_ratio[i], diag.slot_hits[i], diag.sweeps
        )?;
    }

    // inputs first, then their reconstructions from the posterior mean
    let side = model.config.side;
    let batch = sweep(&SceneParams::neutral(), Transform::Azimuth, 8, side)?;
    let mut images = batch.images.clone();
    for mu in model.encode_means(&batch.images)? {
        images.push(model.decode(&Tensor::vector(mu))?);
    }
    let folder = dump_images(&ctx.dir, cfg.experiment.name(), cfg.steps, &images, side)?;
    writeln!(ctx.out, "azimuth sweep and reconstructions in {}", folder.display())?;
    Ok(())
}

fn grad_check(ctx: &mut Ctx) -> Result<()> {
    let checks = gradient_suite(ctx.cfg.seed())?;
    let mut log = ExperimentLog::new();
    writeln!(ctx.out, "component          params  max relative error")?;
    for c in &checks {
        writeln!(ctx.out, "{:<18} {:>6}  {:.3e}", c.component, c.params, c.max_error)?;
        log.push(0, c.component.clone(), c.max_error);
    }
    ctx.write_log(&log)?;
    let worst = checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
    if worst > GRAD_TOLERANCE {
        bail!("gradient check failed: max relative error {worst:.3e} > {GRAD_TOLERANCE:e}");
    }
    Ok(())
}

fn params_report(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let ffn = FfnBaseline::new(cfg.ffn.clone(), cfg.seed());
    let cfn = CfnModel::new(cfg.cfn.clone(), cfg.seed())?;
    let breakdown = |store: &ParamStore| -> serde_json::Value {
        store.iter().map(|(n, p)| (n.to_string(), json!(p.value.len()))).collect()
    };
    let report = json!({
        "ffn": { "total": count_params(&ffn.params), "tensors": breakdown(&ffn.params) },
        "cfn": { "total": count_params(&cfn.params), "tensors": breakdown(&cfn.params) },
    });
    writeln!(ctx.out, "ffn baseline: {}", count_params(&ffn.params))?;
    writeln!(ctx.out, "cfn: {}", count_params(&cfn.params))?;
    ctx.write_json("params", &report)?;
    Ok(())
}

/// Runs `cfg` end to end: artifacts, `manifest.json`, and a `FAILED` marker
/// holding the reason when the experiment fails.
pub fn run(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir)?;
    let failed_marker = dir.join("FAILED");
    if failed_marker.exists() {
        std::fs::remove_file(&failed_marker)?;
    }
    let start = Instant::now();
    let result = run_experiment(cfg, &dir, out);
    let mut snapshot = cfg.clone();
    snapshot.output_dir = Some(dir.clone());
    let manifest = json!({
        "experiment": cfg.experiment,
        "version": VERSION,
        "status": if result.is_ok() { "ok" } else { "failed" },
        "wall_time_seconds": start.elapsed().as_secs_f64(),
        "config": snapshot,
    });
    write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    if let Err(e) = &result {
        write_atomic(&failed_marker, format!("{e:#}\n").as_bytes())?;
    }
    result
}
