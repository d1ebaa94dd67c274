//! Retraining on a single primitive and watching the other seven degrade.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{full_validation_set, streams, FfnBaseline, FfnConfig, TrainingConfig};
use crate::cfn::{CfnConfig, CfnModel};
use crate::error::{Error, Result};
use crate::log::ExperimentLog;
use crate::taskdata::{validation_set, PrimitiveId, TaskSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgettingConfig {
    /// Pre-training stops once mean validation L2 over all tasks is below this.
    pub convergence_threshold: f64,
    pub pretrain_max_steps: u64,
    /// How often pre-training checks for convergence.
    pub pretrain_eval_every: u64,
    pub retrain_steps: u64,
    pub eval_every: u64,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig {
            convergence_threshold: 0.01,
            pretrain_max_steps: 60_000,
            pretrain_eval_every: 1000,
            retrain_steps: 5000,
            eval_every: 100,
        }
    }
}

impl ForgettingConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.convergence_threshold > 0.0) {
            return Err(Error::config(format!("{prefix}.convergence_threshold"), "must be > 0"));
        }
        for (k, v) in [
            ("pretrain_eval_every", self.pretrain_eval_every),
            ("eval_every", self.eval_every),
            ("retrain_steps", self.retrain_steps),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{prefix}.{k}"), "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Both models after joint training on all eight primitives.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub cfn: CfnModel,
    pub ffn: FfnBaseline,
    /// Steps the CFN has been trained for; retraining continues its schedule from here.
    pub cfn_steps: u64,
    pub ffn_steps: u64,
    pub cfn_val_loss: f64,
    pub ffn_val_loss: f64,
    pub log: ExperimentLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub model: String,
    pub retrain_task: PrimitiveId,
    /// `(retrain step, mean L2 on the other tasks)`, steps strictly increasing.
    pub curve: Vec<(u64, f64)>,
    /// CFN only: mean weight not placed on the retrain task's function.
    pub off_function_mass: Option<f64>,
}

impl ForgettingReport {
    pub fn start_loss(&self) -> f64 {
        self.curve.first().map_or(f64::NAN, |c| c.1)
    }

    pub fn end_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.1)
    }

    /// End-of-retraining loss relative to the loss before retraining.
    pub fn growth(&self) -> f64 {
        self.end_loss() / self.start_loss()
    }
}

/// Trains a CFN (through its full sharpening schedule) and the baseline on the
/// mixed stream until both reach the convergence threshold.
pub fn pretrain(
    cfn_cfg: &CfnConfig,
    ffn_cfg: &FfnConfig,
    train: &TrainingConfig,
    fcfg: &ForgettingConfig,
    seed: u64,
) -> Result<Pretrained> {
    fcfg.validate("forgetting")?;
    let dim = cfn_cfg.input_dim;
    let val = full_validation_set(seed, dim, train.val_per_task)?;
    let mut log = ExperimentLog::new();

    let mut cfn = CfnModel::new(cfn_cfg.clone(), seed.wrapping_add(streams::MODEL))?;
    let mut sampler = TaskSampler::new(seed.wrapping_add(streams::TRAIN), dim)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(streams::NOISE));
    let ramp_end = cfn_cfg.sharpen_gamma.end_step;
    let mut cfn_steps = 0;
    let mut cfn_val_loss;
    loop {
        if cfn_steps % fcfg.pretrain_eval_every == 0 {
            cfn_val_loss = cfn.evaluate(&val, cfn.config.sharpen_gamma.value(cfn_steps)).loss;
            log.push(cfn_steps, "cfn_val_loss", cfn_val_loss);
            if cfn_steps >= ramp_end && cfn_val_loss <= fcfg.convergence_threshold {
                break;
            }
            if cfn_steps >= fcfg.pretrain_max_steps {
                return Err(Error::Convergence(format!(
                    "cfn validation loss {cfn_val_loss:.5} above {} after {cfn_steps} steps",
                    fcfg.convergence_threshold
                )));
            }
        }
        let batch = sampler.batch(train.batch_size, None);
        cfn.train_step(&batch, cfn_steps, &train.opt, &mut noise_rng);
        cfn_steps += 1;
    }

    let mut ffn = FfnBaseline::new(ffn_cfg.clone(), seed.wrapping_add(streams::MODEL));
    let mut sampler = TaskSampler::new(seed.wrapping_add(streams::TRAIN), dim)?;
    let mut ffn_steps = 0;
    let mut ffn_val_loss;
    loop {
        if ffn_steps % fcfg.pretrain_eval_every == 0 {
            ffn_val_loss = ffn.evaluate(&val);
            log.push(ffn_steps.max(cfn_steps), "ffn_val_loss", ffn_val_loss);
            if ffn_val_loss <= fcfg.convergence_threshold {
                break;
            }
            if ffn_steps >= fcfg.pretrain_max_steps {
                return Err(Error::Convergence(format!(
                    "ffn validation loss {ffn_val_loss:.5} above {} after {ffn_steps} steps",
                    fcfg.convergence_threshold
                )));
            }
        }
        ffn.train_step(&sampler.batch(train.batch_size, None), &train.opt);
        ffn_steps += 1;
    }

    Ok(Pretrained {
        cfn,
        ffn,
        cfn_steps,
        ffn_steps,
        cfn_val_loss,
        ffn_val_loss,
        log,
    })
}

/// Retrains copies of both pre-trained models on `task` alone with the same
/// batches, evaluating on the other seven tasks every `eval_every` steps.
/// Returns `(cfn, ffn)` reports.
pub fn retrain(
    pre: &Pretrained,
    task: PrimitiveId,
    train: &TrainingConfig,
    fcfg: &ForgettingConfig,
    seed: u64,
) -> Result<(ForgettingReport, ForgettingReport)> {
    let mut cfn = pre.cfn.clone();
    let mut ffn = pre.ffn.clone();
    let dim = cfn.config.input_dim;
    let others: Vec<PrimitiveId> = PrimitiveId::ALL.into_iter().filter(|&p| p != task).collect();
    let val_seed = seed.wrapping_add(streams::VALIDATION);
    let val_other = validation_set(val_seed, dim, train.val_per_task, &others)?;
    let val_task = validation_set(val_seed ^ 0xa5a5, dim, 64, &[task])?;

    let task_seed = seed.wrapping_add(streams::RETRAIN).wrapping_add(task.index() as u64 * 7919);
    let mut sampler = TaskSampler::new(task_seed, dim)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(task_seed ^ 0x9e37);

    let gamma_at = |k: u64, m: &CfnModel| m.config.sharpen_gamma.value(pre.cfn_steps + k);
    // The function the controller uses for this task at the start of retraining.
    let (_, w0) = cfn.evaluate_weights(&val_task, gamma_at(0, &cfn));
    let mut mean_w = vec![0.0; cfn.config.num_functions];
    for w in &w0 {
        for (m, v) in mean_w.iter_mut().zip(w.as_slice()) {
            *m += v;
        }
    }
    let chosen = crate::cfn::WeightVector::from_vec(mean_w).argmax();

    let mut cfn_curve = Vec::new();
    let mut ffn_curve = Vec::new();
    let mut off_mass = Vec::new();
    for k in 0..=fcfg.retrain_steps {
        if k % fcfg.eval_every == 0 || k == fcfg.retrain_steps {
            let gamma = gamma_at(k, &cfn);
            cfn_curve.push((k, cfn.evaluate(&val_other, gamma).loss));
            ffn_curve.push((k, ffn.evaluate(&val_other)));
            let (_, w) = cfn.evaluate_weights(&val_task, gamma);
            let mass = w.iter().map(|w| 1.0 - w.as_slice()[chosen]).sum::<f64>() / w.len() as f64;
            off_mass.push(mass);
        }
        if k == fcfg.retrain_steps {
            break;
        }
        let batch = sampler.batch(train.batch_size, Some(task));
        cfn.train_step(&batch, pre.cfn_steps + k, &train.opt, &mut noise_rng);
        ffn.train_step(&batch, &train.opt);
    }
    let mass = off_mass.iter().sum::<f64>() / off_mass.len() as f64;
    Ok((
        ForgettingReport {
            model: "cfn".into(),
            retrain_task: task,
            curve: cfn_curve,
            off_function_mass: Some(mass),
        },
        ForgettingReport {
            model: "ffn".into(),
            retrain_task: task,
            curve: ffn_curve,
            off_function_mass: None,
        },
    ))
}

/// Pre-trains both models, then retrains on `retrain_task`.
pub fn run_forgetting_experiment(
    retrain_task: PrimitiveId,
    cfn_cfg: &CfnConfig,
    ffn_cfg: &FfnConfig,
    train: &TrainingConfig,
    fcfg: &ForgettingConfig,
    seed: u64,
) -> Result<(ForgettingReport, ForgettingReport)> {
    let pre = pretrain(cfn_cfg, ffn_cfg, train, fcfg, seed)?;
    retrain(&pre, retrain_task, train, fcfg, seed)
}

impl ForgettingReport {
    pub fn to_log(&self) -> ExperimentLog {
        let mut log = ExperimentLog::new();
        for &(step, v) in &self.curve {
            log.push(step, format!("{}_other_task_loss", self.model), v);
        }
        log
    }
}
