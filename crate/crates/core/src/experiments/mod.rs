//! Quantitative protocols for the computation experiments.

mod ffn;
mod forgetting;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfn::{CfnConfig, CfnModel};
use crate::error::Result;
use crate::log::ExperimentLog;
use crate::nn::l2_slice;
use crate::optim::RmspropConfig;
use crate::taskdata::{validation_set, PrimitiveId, TaskSample, TaskSampler};

pub use ffn::{ffn_forward, FfnBaseline, FfnConfig};
pub use forgetting::{
    pretrain, retrain, run_forgetting_experiment, ForgettingConfig, ForgettingReport, Pretrained,
};

/// Offsets that derive independent streams from one run seed.
pub(crate) mod streams {
    pub const MODEL: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const VALIDATION: u64 = 0x5eed_0000;
    pub const RETRAIN: u64 = 3;
}

/// Settings shared by the CFN and baseline training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub opt: RmspropConfig,
    pub batch_size: usize,
    pub eval_every: u64,
    pub val_per_task: usize,
}

impl TrainingConfig {
    /// rmsprop for the computation experiments: no weight decay, and an
    /// epsilon of 1e-5 so near-zero gradients do not become full-size steps.
    pub fn computation_opt() -> RmspropConfig {
        RmspropConfig {
            weight_decay: 0.0,
            epsilon: 1e-5,
            ..RmspropConfig::default()
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.opt.validate(&format!("{prefix}.opt"))?;
        if self.batch_size == 0 {
            return Err(crate::Error::config(format!("{prefix}.batch_size"), "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(crate::Error::config(format!("{prefix}.eval_every"), "must be >= 1"));
        }
        if self.val_per_task == 0 {
            return Err(crate::Error::config(format!("{prefix}.val_per_task"), "must be >= 1"));
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            opt: TrainingConfig::computation_opt(),
            batch_size: 20,
            eval_every: 500,
            val_per_task: 1024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisentanglementRun {
    pub log: ExperimentLog,
    pub model: CfnModel,
    pub final_loss: f64,
    /// Disentanglement of the weights the network computes with.
    pub final_disentanglement: f64,
    /// Disentanglement of the controller's unsharpened softmax output.
    pub final_raw_disentanglement: f64,
    /// Loss of the best constant predictor on the same validation set.
    pub constant_baseline_loss: f64,
}

pub fn full_validation_set(seed: u64, dim: usize, per_task: usize) -> Result<Vec<TaskSample>> {
    validation_set(seed.wrapping_add(streams::VALIDATION), dim, per_task, &PrimitiveId::ALL)
}

/// Loss of predicting the mean target vector for every sample.
pub fn constant_predictor_loss(samples: &[TaskSample]) -> f64 {
    let dim = samples[0].target.len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, t) in mean.iter_mut().zip(s.target.data()) {
            *m += t;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    samples.iter().map(|s| l2_slice(&mean, s.target.data())).sum::<f64>() / samples.len() as f64
}

/// Trains a CFN on the mixed eight-primitive stream, logging validation loss
/// and disentanglement every `train.eval_every` steps. Without sharpening the
/// exponent is pinned to 1 and the noise to 0.
pub fn run_disentanglement_experiment(
    cfn: &CfnConfig,
    train: &TrainingConfig,
    with_sharpening: bool,
    steps: u64,
    seed: u64,
) -> Result<DisentanglementRun> {
    let cfg = if with_sharpening {
        cfn.clone()
    } else {
        cfn.clone().without_sharpening()
    };
    let mut model = CfnModel::new(cfg, seed.wrapping_add(streams::MODEL))?;
    let mut sampler = TaskSampler::new(seed.wrapping_add(streams::TRAIN), model.config.input_dim)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(streams::NOISE));
    let val = full_validation_set(seed, model.config.input_dim, train.val_per_task)?;
    let constant_baseline_loss = constant_predictor_loss(&val);

    let mut log = ExperimentLog::new();
    let mut running = 0.0;
    let mut since = 0u64;
    for step in 0..=steps {
        if step % train.eval_every == 0 || step == steps {
            let gamma = model.config.sharpen_gamma.value(step);
            let eval = model.evaluate(&val, gamma);
            let raw = crate::cfn::disentanglement(&model.raw_weights(&val));
            log.push(step, "gamma", gamma);
            if since > 0 {
                log.push(step, "train_loss", running / since as f64);
            }
            log.push(step, "val_loss", eval.loss);
            log.push(step, "disentanglement", eval.disentanglement);
            log.push(step, "raw_disentanglement", raw);
            running = 0.0;
            since = 0;
        }
        if step == steps {
            break;
        }
        let batch = sampler.batch(train.batch_size, None);
        running += model.train_step(&batch, step, &train.opt, &mut noise_rng);
        since += 1;
    }
    Ok(DisentanglementRun {
        final_loss: log.last("val_loss").unwrap_or(f64::NAN),
        final_disentanglement: log.last("disentanglement").unwrap_or(f64::NAN),
        final_raw_disentanglement: log.last("raw_disentanglement").unwrap_or(f64::NAN),
        constant_baseline_loss,
        log,
        model,
    })
}

/// Trains the feedforward baseline alone on the mixed stream, logging
/// validation loss every `train.eval_every` steps.
pub fn run_ffn_experiment(
    ffn: &FfnConfig,
    train: &TrainingConfig,
    steps: u64,
    seed: u64,
) -> Result<(FfnBaseline, ExperimentLog)> {
    train.validate("train")?;
    let mut model = FfnBaseline::new(ffn.clone(), seed.wrapping_add(streams::MODEL));
    let mut sampler = TaskSampler::new(seed.wrapping_add(streams::TRAIN), ffn.input_dim)?;
    let val = full_validation_set(seed, ffn.input_dim, train.val_per_task)?;
    let mut log = ExperimentLog::new();
    let mut running = 0.0;
    let mut since = 0u64;
    for step in 0..=steps {
        if step % train.eval_every == 0 || step == steps {
            if since > 0 {
                log.push(step, "train_loss", running / since as f64);
            }
            log.push(step, "val_loss", model.evaluate(&val));
            running = 0.0;
            since = 0;
        }
        if step == steps {
            break;
        }
        running += model.train_step(&sampler.batch(train.batch_size, None), &train.opt);
        since += 1;
    }
    Ok((model, log))
}
