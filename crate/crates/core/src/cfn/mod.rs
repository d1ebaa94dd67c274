//! Controller-function networks.
//!
//! An LSTM controller reads the input together with a one-hot task code and
//! emits a distribution over `F` single-layer PReLU "function" networks. The
//! network output is the weighted sum of the function outputs. During
//! training the distribution is noised and sharpened with an exponent that
//! rises on a schedule, which drives the controller toward hard choices.

mod sharpen;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_backward, softmax_slice, DenseLayer, LstmCell, LstmTrace, PreluSite};
use crate::nn::{l2_loss, l2_slice};
use crate::optim::{rmsprop_step, RmspropConfig, Schedule};
use crate::params::ParamStore;
use crate::taskdata::{TaskSample, NUM_PRIMITIVES};
use crate::tensor::{dot, Tensor};

pub use sharpen::{sharpen, sharpen_with_floor, DEFAULT_FLOOR};
use sharpen::{draw_noise, sharpen_backward, sharpen_traced, SharpenTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfnConfig {
    pub input_dim: usize,
    pub num_tasks: usize,
    pub num_functions: usize,
    pub controller_hidden: usize,
    pub sharpen_gamma: Schedule,
    pub noise_sigma: f64,
    pub epsilon_floor: f64,
}

impl Default for CfnConfig {
    fn default() -> Self {
        CfnConfig {
            input_dim: 10,
            num_tasks: NUM_PRIMITIVES,
            num_functions: 8,
            controller_hidden: 10,
            sharpen_gamma: Schedule::linear(1.0, 100.0, 0, 24_000),
            noise_sigma: 0.05,
            epsilon_floor: DEFAULT_FLOOR,
        }
    }
}

impl CfnConfig {
    /// Gamma ramps 1 -> 100 over the first 80% of `steps`.
    pub fn gamma_ramp(steps: u64) -> Schedule {
        Schedule::linear(1.0, 100.0, 0, steps * 4 / 5)
    }

    /// Gamma stays at 1 for the first half of `steps`, then ramps to 100 by 80%.
    pub fn warm_start_ramp(steps: u64) -> Schedule {
        Schedule::linear(1.0, 100.0, steps / 2, steps * 4 / 5)
    }

    /// Settings used by the computation experiments: a soft warm-up before
    /// sharpening begins and light noise (sigma 0.01). With gamma ramping from
    /// step 0 and sigma 0.05 the controller tends to route several primitives
    /// through one function before the functions have differentiated.
    pub fn warm_start(steps: u64) -> Self {
        CfnConfig {
            sharpen_gamma: Self::warm_start_ramp(steps),
            noise_sigma: 0.01,
            ..CfnConfig::default()
        }
    }

    /// Plain soft mixture: gamma fixed at 1, no noise.
    pub fn without_sharpening(mut self) -> Self {
        self.sharpen_gamma = Schedule::constant(1.0);
        self.noise_sigma = 0.0;
        self
    }

    pub fn controller_input_dim(&self) -> usize {
        self.input_dim + self.num_tasks
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        let k = |f: &str| format!("{prefix}.{f}");
        if self.input_dim == 0 {
            return Err(Error::config(k("input_dim"), "must be >= 1"));
        }
        if self.num_tasks == 0 {
            return Err(Error::config(k("num_tasks"), "must be >= 1"));
        }
        if self.num_functions == 0 {
            return Err(Error::config(k("num_functions"), "must be >= 1"));
        }
        if self.controller_hidden == 0 {
            return Err(Error::config(k("controller_hidden"), "must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(k("noise_sigma"), "must be >= 0"));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::config(k("epsilon_floor"), "must be > 0"));
        }
        self.sharpen_gamma.validate(&k("sharpen_gamma"))?;
        if self.sharpen_gamma.start_value < 1.0 || self.sharpen_gamma.end_value < 1.0 {
            return Err(Error::config(k("sharpen_gamma"), "values must be >= 1"));
        }
        Ok(())
    }
}

/// Controller output: non-negative weights over the function layers summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Tensor,
}

impl WeightVector {
    pub fn from_vec(w: Vec<f64>) -> Self {
        WeightVector { w: Tensor::vector(w) }
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self::from_vec(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self::from_vec(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        self.w.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.w.l2_norm()
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.as_slice().iter().enumerate() {
            if *v > self.as_slice()[best] {
                best = i;
            }
        }
        best
    }
}

/// Mean L2 norm of the weight vectors: `1/sqrt(F)` when uniform, 1 when one-hot.
pub fn disentanglement(weights: &[WeightVector]) -> f64 {
    assert!(!weights.is_empty(), "disentanglement of an empty batch");
    weights.iter().map(WeightVector::l2_norm).sum::<f64>() / weights.len() as f64
}

/// A fixed map standing in for a function layer; it has no parameters and
/// receives no gradient.
pub type OpaqueFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FunctionUnit {
    Learned { layer: DenseLayer, act: PreluSite },
    Opaque(OpaqueFn),
}

impl fmt::Debug for FunctionUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionUnit::Learned { layer, .. } => f
                .debug_struct("Learned")
                .field("weight", &layer.weight_name())
                .finish(),
            FunctionUnit::Opaque(_) => f.write_str("Opaque"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CfnModel {
    pub config: CfnConfig,
    controller: LstmCell,
    head: DenseLayer,
    functions: Vec<FunctionUnit>,
    pub params: ParamStore,
}

/// Per-sample forward values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SampleTrace {
    lstm: LstmTrace,
    soft: Vec<f64>,
    sharp: SharpenTrace,
    fn_pre: Vec<Vec<f64>>,
    fn_out: Vec<Vec<f64>>,
    x: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub disentanglement: f64,
}

impl CfnModel {
    pub fn new(config: CfnConfig, seed: u64) -> Result<Self> {
        config.validate("cfn")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let controller = LstmCell::new("controller.lstm", config.controller_input_dim(), config.controller_hidden);
        controller.init(&mut params, &mut rng);
        let head = DenseLayer::new("controller.head", config.controller_hidden, config.num_functions);
        head.init(&mut params, &mut rng);
        let functions = (0..config.num_functions)
            .map(|i| {
                let layer = DenseLayer::new(&format!("function{i}"), config.input_dim, config.input_dim);
                let act = PreluSite::new(&format!("function{i}"));
                layer.init(&mut params, &mut rng);
                act.init(&mut params, &mut rng);
                FunctionUnit::Learned { layer, act }
            })
            .collect();
        Ok(CfnModel {
            config,
            controller,
            head,
            functions,
            params,
        })
    }

    /// Replaces the function layers with fixed maps, dropping their parameters.
    pub fn with_opaque_functions(mut self, fns: Vec<OpaqueFn>) -> Result<Self> {
        if fns.len() != self.config.num_functions {
            return Err(Error::dim("opaque functions", &[self.config.num_functions], &[fns.len()]));
        }
        let mut kept = ParamStore::new();
        for (name, p) in self.params.iter() {
            if name.starts_with("controller.") {
                kept.insert(name, p.value.clone());
            }
        }
        self.params = kept;
        self.functions = fns.into_iter().map(FunctionUnit::Opaque).collect();
        Ok(self)
    }

    pub fn functions(&self) -> &[FunctionUnit] {
        &self.functions
    }

    pub fn reset(&mut self) {
        self.controller.reset();
    }

    fn check_inputs(&self, x: &Tensor, one_hot: &Tensor) -> Result<()> {
        x.expect_vector(self.config.input_dim, "cfn input")?;
        one_hot.expect_vector(self.config.num_tasks, "cfn task code")
    }

    /// Unsharpened controller distribution. Advances the controller state.
    pub fn controller_weights(&mut self, x: &Tensor, one_hot: &Tensor) -> Result<WeightVector> {
        self.check_inputs(x, one_hot)?;
        let u = Tensor::concat(x, one_hot);
        let trace = self.controller.step_traced(u.data(), &self.params);
        let mut logits = vec![0.0; self.config.num_functions];
        self.head.forward_batch(&self.params, &trace.h, &mut logits);
        Ok(WeightVector::from_vec(softmax_slice(&logits)))
    }

    /// Output of function layer `i` on the bare input.
    pub fn function_output(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        x.expect_vector(self.config.input_dim, "function input")?;
        let (_, out) = self.eval_function(i, x.data());
        Ok(Tensor::vector(out))
    }

    fn eval_function(&self, i: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.functions[i] {
            FunctionUnit::Learned { layer, act } => {
                let mut pre = vec![0.0; layer.out_dim];
                layer.forward_batch(&self.params, x, &mut pre);
                let mut out = vec![0.0; layer.out_dim];
                act.forward_into(&self.params, &pre, &mut out);
                (pre, out)
            }
            FunctionUnit::Opaque(f) => (Vec::new(), f(x)),
        }
    }

    /// `sum_i w'_i f_i(x)` with `w'` the sharpened controller weights.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &Tensor,
        one_hot: &Tensor,
        gamma: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Result<(Tensor, WeightVector)> {
        self.check_inputs(x, one_hot)?;
        let noise = draw_noise(self.config.num_functions, sigma, rng);
        let t = self.forward_traced(x.data(), one_hot.data(), gamma, &noise);
        Ok((Tensor::vector(t.out), WeightVector::from_vec(t.sharp.out)))
    }

    /// Output for externally supplied weights, bypassing the controller.
    pub fn mix_with_weights(&self, x: &Tensor, w: &WeightVector) -> Result<Tensor> {
        x.expect_vector(self.config.input_dim, "cfn input")?;
        w.tensor().expect_vector(self.config.num_functions, "weight vector")?;
        let mut out = vec![0.0; self.config.input_dim];
        for (i, wi) in w.as_slice().iter().enumerate() {
            let (_, f) = self.eval_function(i, x.data());
            for (o, v) in out.iter_mut().zip(&f) {
                *o += wi * v;
            }
        }
        Ok(Tensor::vector(out))
    }

    pub(crate) fn forward_traced(&mut self, x: &[f64], one_hot: &[f64], gamma: f64, noise: &[f64]) -> SampleTrace {
        let mut u = Vec::with_capacity(x.len() + one_hot.len());
        u.extend_from_slice(x);
        u.extend_from_slice(one_hot);
        let lstm = self.controller.step_traced(&u, &self.params);
        let mut logits = vec![0.0; self.config.num_functions];
        self.head.forward_batch(&self.params, &lstm.h, &mut logits);
        let soft = softmax_slice(&logits);
        let sharp = sharpen_traced(&soft, gamma, noise, self.config.epsilon_floor);

        let mut out = vec![0.0; self.config.input_dim];
        let mut fn_pre = Vec::with_capacity(self.functions.len());
        let mut fn_out = Vec::with_capacity(self.functions.len());
        for i in 0..self.functions.len() {
            let (pre, f) = self.eval_function(i, x);
            let wi = sharp.out[i];
            for (o, v) in out.iter_mut().zip(&f) {
                *o += wi * v;
            }
            fn_pre.push(pre);
            fn_out.push(f);
        }
        SampleTrace {
            lstm,
            soft,
            sharp,
            fn_pre,
            fn_out,
            x: x.to_vec(),
            out,
        }
    }

    /// Accumulates parameter gradients given `d_out`, the loss gradient
    /// w.r.t. the network output.
    pub(crate) fn backward(&mut self, trace: &SampleTrace, d_out: &[f64]) {
        let w = &trace.sharp.out;
        let mut d_sharp = vec![0.0; w.len()];
        for (i, unit) in self.functions.iter().enumerate() {
            d_sharp[i] = dot(d_out, &trace.fn_out[i]);
            if let FunctionUnit::Learned { layer, act } = unit {
                let mut d: Vec<f64> = d_out.iter().map(|g| w[i] * g).collect();
                act.backward_in_place(&mut self.params, &trace.fn_pre[i], &mut d);
                layer.backward_batch(&mut self.params, &trace.x, &d, None);
            }
        }
        let d_soft = sharpen_backward(&trace.sharp, &d_sharp);
        let d_logits = softmax_backward(&trace.soft, &d_soft);
        let mut dh = vec![0.0; self.config.controller_hidden];
        self.head
            .backward_batch(&mut self.params, &trace.lstm.h, &d_logits, Some(&mut dh));
        self.controller.backward(&mut self.params, &trace.lstm, &dh, None);
    }

    /// Mean per-sample L2 loss over `batch`, with gradients accumulated into
    /// `params`. Each sample is a one-step episode from a reset controller.
    pub fn batch_loss_and_grad(&mut self, batch: &[TaskSample], gamma: f64, noises: &[Vec<f64>]) -> f64 {
        let n = batch.len() as f64;
        let dim = self.config.input_dim as f64;
        let mut total = 0.0;
        for (s, noise) in batch.iter().zip(noises) {
            self.reset();
            let t = self.forward_traced(s.input.data(), s.one_hot.data(), gamma, noise);
            let d: Vec<f64> = t
                .out
                .iter()
                .zip(s.target.data())
                .map(|(o, y)| 2.0 * (o - y) / dim / n)
                .collect();
            total += l2_slice(&t.out, s.target.data());
            self.backward(&t, &d);
        }
        self.reset();
        total / n
    }

    /// Loss without touching gradients; used by finite-difference checks.
    pub fn batch_loss(&mut self, batch: &[TaskSample], gamma: f64, noises: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (s, noise) in batch.iter().zip(noises) {
            self.reset();
            let t = self.forward_traced(s.input.data(), s.one_hot.data(), gamma, noise);
            total += l2_slice(&t.out, s.target.data());
        }
        self.reset();
        total / batch.len() as f64
    }

    /// One optimisation step at training step `step`; returns the batch loss.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[TaskSample],
        step: u64,
        opt: &RmspropConfig,
        rng: &mut R,
    ) -> f64 {
        assert!(!batch.is_empty(), "empty training batch");
        let gamma = self.config.sharpen_gamma.value(step);
        let sigma = self.config.noise_sigma;
        let noises: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| draw_noise(self.config.num_functions, sigma, rng))
            .collect();
        self.params.zero_grads();
        let loss = self.batch_loss_and_grad(batch, gamma, &noises);
        rmsprop_step(&mut self.params, opt);
        loss
    }

    /// Noise-free loss and disentanglement at sharpening exponent `gamma`.
    pub fn evaluate(&mut self, samples: &[TaskSample], gamma: f64) -> Evaluation {
        let (loss, weights) = self.evaluate_weights(samples, gamma);
        Evaluation {
            loss,
            disentanglement: disentanglement(&weights),
        }
    }

    /// Mean loss plus the effective (sharpened, noise-free) weights per sample.
    pub fn evaluate_weights(&mut self, samples: &[TaskSample], gamma: f64) -> (f64, Vec<WeightVector>) {
        let zeros = vec![0.0; self.config.num_functions];
        let mut loss = 0.0;
        let mut weights = Vec::with_capacity(samples.len());
        for s in samples {
            self.reset();
            let t = self.forward_traced(s.input.data(), s.one_hot.data(), gamma, &zeros);
            loss += l2_slice(&t.out, s.target.data());
            weights.push(WeightVector::from_vec(t.sharp.out));
        }
        self.reset();
        (loss / samples.len() as f64, weights)
    }

    /// Unsharpened controller weights per sample.
    pub fn raw_weights(&mut self, samples: &[TaskSample]) -> Vec<WeightVector> {
        let zeros = vec![0.0; self.config.num_functions];
        let out = samples
            .iter()
            .map(|s| {
                self.reset();
                WeightVector::from_vec(self.forward_traced(s.input.data(), s.one_hot.data(), 1.0, &zeros).soft)
            })
            .collect();
        self.reset();
        out
    }
}

/// Free-function form of [`CfnModel::train_step`].
pub fn cfn_train_step<R: Rng + ?Sized>(
    model: &mut CfnModel,
    batch: &[TaskSample],
    step: u64,
    opt: &RmspropConfig,
    rng: &mut R,
) -> f64 {
    model.train_step(batch, step, opt, rng)
}

/// Free-function form of [`CfnModel::forward`].
pub fn cfn_forward<R: Rng + ?Sized>(
    model: &mut CfnModel,
    x: &Tensor,
    one_hot: &Tensor,
    gamma: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Tensor, WeightVector)> {
    model.forward(x, one_hot, gamma, sigma, rng)
}

/// Mean L2 loss of a model evaluated with the given weights per sample.
pub fn loss_with_weights(model: &CfnModel, samples: &[TaskSample], weights: &[WeightVector]) -> Result<f64> {
    let mut total = 0.0;
    for (s, w) in samples.iter().zip(weights) {
        total += l2_loss(&model.mix_with_weights(&s.input, w)?, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests;
