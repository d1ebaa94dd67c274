//! Clamped training, invariance diagnostics and image dumps.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{make_clamped_batch, sweep, ClampedBatch, LatentLayout, SceneParams, Transform, VaeModel};
use crate::error::{Error, Result};
use crate::log::ExperimentLog;
use crate::optim::{rmsprop_step, RmspropConfig};
use crate::tensor::Tensor;

/// Replaces every latent index outside `trained` by its mean over the batch.
/// `z` is row-major `[batch, dim]`. Returns the clamped codes and the means.
pub fn clamp_to_mean(z: &[f64], dim: usize, trained: Range<usize>) -> (Vec<f64>, Vec<f64>) {
    let b = z.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in z.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut out = z.to_vec();
    for row in out.chunks_exact_mut(dim) {
        for (i, v) in row.iter_mut().enumerate() {
            if !trained.contains(&i) {
                *v = mean[i];
            }
        }
    }
    (out, mean)
}

/// `kappa (v - mean(v))` for one clamped latent across a batch.
pub fn invariance_gradient(values: &[f64], kappa: f64) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| kappa * (v - mean)).collect()
}

/// One clamped SGVB step on `batch`, training the latents of `z_train`.
/// Returns the mean batch loss before the update.
pub fn clamped_train_step<R: Rng + ?Sized>(
    model: &mut VaeModel,
    batch: &ClampedBatch,
    z_train: Transform,
    opt: &RmspropConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.active != z_train {
        return Err(Error::Usage(format!(
            "batch varies {} but the step trains {}",
            batch.active, z_train
        )));
    }
    if batch.len() < 2 {
        return Err(Error::Usage("a clamped batch needs at least two images".into()));
    }
    let p = model.config.image_dim();
    for img in &batch.images {
        img.expect_vector(p, "clamped batch image")?;
    }
    let l = model.config.latent_dim();
    let eps: Vec<f64> = (0..batch.len() * l).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let trained = model.layout().slots(z_train);
    let pass = model.pass(&batch.flat(), &eps, Some(trained));
    rmsprop_step(&mut model.params, opt);
    Ok(pass.loss)
}

/// Picks a transform with probability proportional to `ratio`
/// (azimuth, elevation, light, intrinsic).
pub fn draw_transform<R: Rng + ?Sized>(rng: &mut R, ratio: &[f64; 4]) -> Result<Transform> {
    let w = WeightedIndex::new(ratio).map_err(|e| Error::config("ratio", e.to_string()))?;
    Ok(Transform::ALL[w.sample(rng)])
}

/// Population variance of each posterior mean coordinate across the batch.
pub fn latent_variances(model: &VaeModel, batch: &ClampedBatch) -> Result<Vec<f64>> {
    let mus = model.encode_means(&batch.images)?;
    let n = mus.len() as f64;
    let dim = model.config.latent_dim();
    let mut out = vec![0.0; dim];
    for (i, o) in out.iter_mut().enumerate() {
        let mean = mus.iter().map(|m| m[i]).sum::<f64>() / n;
        *o = mus.iter().map(|m| (m[i] - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(out)
}

/// Index of the latent whose posterior mean varies most across `batch`.
/// Ties go to the lowest index.
pub fn max_variance_latent(model: &VaeModel, batch: &ClampedBatch) -> Result<usize> {
    Ok(argmax_first(&latent_variances(model, batch)?))
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // tied values share the average rank
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation. NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs equal lengths");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// How well the code separates the three extrinsic factors, measured on
/// evenly spaced sweeps around several fixed base scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeDiagnostics {
    /// Per extrinsic factor: variance of its own slot over the mean variance
    /// of all other slots, with variances averaged across the sweeps.
    pub slot_ratio: [f64; 3],
    /// Per extrinsic factor: how many sweeps [`max_variance_latent`] assigned
    /// to the designated slot, out of `sweeps`.
    pub slot_hits: [usize; 3],
    pub sweeps: usize,
    /// Spearman correlation between azimuth and the azimuth slot's mean,
    /// one per sweep.
    pub azimuth_spearman: Vec<f64>,
}

impl VaeDiagnostics {
    pub fn compute(model: &VaeModel, seed: u64, sweeps: usize, sweep_len: usize) -> Result<Self> {
        let layout = *model.layout();
        let side = model.config.side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bases: Vec<SceneParams> = (0..sweeps).map(|_| SceneParams::random(&mut rng)).collect();
        let mut slot_ratio = [0.0; 3];
        let mut slot_hits = [0; 3];
        let mut azimuth_spearman = Vec::with_capacity(sweeps);
        for (t_i, t) in Transform::EXTRINSIC.into_iter().enumerate() {
            let slot = layout.slots(t).start;
            let mut mean_var = vec![0.0; layout.total_dim()];
            for base in &bases {
                let batch = sweep(base, t, sweep_len, side)?;
                let var = latent_variances(model, &batch)?;
                if argmax_first(&var) == slot {
                    slot_hits[t_i] += 1;
                }
                for (m, v) in mean_var.iter_mut().zip(&var) {
                    *m += v / sweeps as f64;
                }
                if t == Transform::Azimuth {
                    let az: Vec<f64> = batch.scenes.iter().map(|s| s.azimuth).collect();
                    let mu: Vec<f64> = model.encode_means(&batch.images)?.iter().map(|m| m[slot]).collect();
                    azimuth_spearman.push(spearman(&az, &mu));
                }
            }
            slot_ratio[t_i] = slot_ratio_of(&mean_var, slot);
        }
        Ok(VaeDiagnostics {
            slot_ratio,
            slot_hits,
            sweeps,
            azimuth_spearman,
        })
    }

    fn push_into(&self, log: &mut ExperimentLog, step: u64) {
        for (i, t) in Transform::EXTRINSIC.into_iter().enumerate() {
            log.push(step, format!("{t}_slot_ratio"), self.slot_ratio[i]);
            log.push(step, format!("{t}_slot_hits"), self.slot_hits[i] as f64);
        }
        let n = self.azimuth_spearman.len() as f64;
        log.push(step, "azimuth_spearman_mean", self.azimuth_spearman.iter().sum::<f64>() / n);
    }
}

/// Variance at `slot` over the mean variance of the other slots.
pub(crate) fn slot_ratio_of(var: &[f64], slot: usize) -> f64 {
    let others: f64 = var.iter().enumerate().filter(|(i, _)| *i != slot).map(|(_, v)| v).sum();
    var[slot] / (others / (var.len() - 1) as f64)
}

/// Offsets deriving independent streams from the run seed.
const TRANSFORM_STREAM: u64 = 0x7a11;
const NOISE_STREAM: u64 = 0x7a12;
const DIAG_SEED: u64 = 0xd1a6;

/// Clamped training for `steps` steps. Logs the batch loss every step and
/// the invariance diagnostics every `diag_every` steps and at the end.
pub fn train_vae(
    model: &mut VaeModel,
    steps: u64,
    seed: u64,
    ratio: [f64; 4],
    opt: &RmspropConfig,
) -> Result<ExperimentLog> {
    opt.validate("opt")?;
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ TRANSFORM_STREAM);
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM);
    let layout: LatentLayout = *model.layout();
    let (batch_size, side, every) = (model.config.batch_size, model.config.side, model.config.diag_every);
    let mut log = ExperimentLog::new();
    for step in 0..steps {
        let active = draw_transform(&mut pick, &ratio)?;
        let batch_seed: u64 = pick.gen();
        let batch = make_clamped_batch(batch_seed, active, &layout, batch_size, side)?;
        let loss = clamped_train_step(model, &batch, active, opt, &mut noise)?;
        if !loss.is_finite() {
            return Err(Error::Convergence(format!("vae loss became {loss} at step {step}")));
        }
        log.push(step, "loss", loss);
        if (step + 1) % every == 0 || step + 1 == steps {
            VaeDiagnostics::compute(model, DIAG_SEED, 4, 32)?.push_into(&mut log, step);
        }
    }
    Ok(log)
}

/// Writes a binary PGM (P5) with 8-bit depth.
pub fn write_pgm(path: &Path, image: &Tensor, side: usize) -> Result<()> {
    if image.len() != side * side {
        return Err(Error::dim("pgm image", &[side * side], &[image.len()]));
    }
    let mut buf = format!("P5\n{side} {side}\n255\n").into_bytes();
    buf.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Writes `images` to `{dir}/{experiment}/{step}/{index}.pgm`; returns the folder.
pub fn dump_images(dir: &Path, experiment: &str, step: u64, images: &[Tensor], side: usize) -> Result<PathBuf> {
    let folder = dir.join(experiment).join(step.to_string());
    fs::create_dir_all(&folder)?;
    for (i, img) in images.iter().enumerate() {
        write_pgm(&folder.join(format!("{i}.pgm")), img, side)?;
    }
    Ok(folder)
}
