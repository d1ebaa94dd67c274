//! rmsprop and scalar schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    /// Moving-average coefficient on the squared gradient.
    pub momentum_decay: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            learning_rate: 0.0005,
            momentum_decay: 0.1,
            weight_decay: 0.01,
            epsilon: 1e-8,
        }
    }
}

impl RmspropConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("{prefix}.learning_rate"), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.momentum_decay) {
            return Err(Error::config(format!("{prefix}.momentum_decay"), "must be in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("{prefix}.weight_decay"), "must be >= 0"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("{prefix}.epsilon"), "must be > 0"));
        }
        Ok(())
    }
}

/// One rmsprop update over every entry, followed by zeroing the gradients.
///
/// `cache <- (1 - d) cache + d g^2`,
/// `theta <- theta - lr g / (sqrt(cache) + eps) - lr wd theta`.
pub fn rmsprop_step(params: &mut ParamStore, cfg: &RmspropConfig) {
    let d = cfg.momentum_decay;
    let lr = cfg.learning_rate;
    let shrink = lr * cfg.weight_decay;
    for (_, p) in params.iter_mut() {
        let theta = p.value.data_mut();
        let cache = p.cache.data_mut();
        let grad = p.grad.data_mut();
        for ((t, c), g) in theta.iter_mut().zip(cache.iter_mut()).zip(grad.iter_mut()) {
            *c = (1.0 - d) * *c + d * *g * *g;
            let old = *t;
            *t = old - lr * *g / (c.sqrt() + cfg.epsilon) - shrink * old;
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    LinearRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start_value: f64,
    pub end_value: f64,
    pub start_step: u64,
    pub end_step: u64,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant,
            start_value: v,
            end_value: v,
            start_step: 0,
            end_step: 0,
        }
    }

    pub fn linear(start_value: f64, end_value: f64, start_step: u64, end_step: u64) -> Self {
        Schedule {
            kind: ScheduleKind::LinearRamp,
            start_value,
            end_value,
            start_step,
            end_step,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.start_step > self.end_step {
            return Err(Error::config(
                format!("{prefix}.start_step"),
                "must be <= end_step",
            ));
        }
        if !(self.start_value.is_finite() && self.end_value.is_finite()) {
            return Err(Error::config(prefix, "values must be finite"));
        }
        Ok(())
    }

    pub fn value(&self, step: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.start_value,
            ScheduleKind::LinearRamp => {
                if step <= self.start_step {
                    self.start_value
                } else if step >= self.end_step {
                    self.end_value
                } else {
                    let t = (step - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
                    self.start_value + t * (self.end_value - self.start_value)
                }
            }
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(s: &Schedule, step: u64) -> f64 {
    s.value(step)
}
