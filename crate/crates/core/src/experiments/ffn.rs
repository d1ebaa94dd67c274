//! Parameter-matched feedforward baseline: 18 -> 100 -> 100 -> 10 with a
//! scalar PReLU after each linear map (13013 parameters).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_slice, DenseLayer, PreluSite};
use crate::optim::{rmsprop_step, RmspropConfig};
use crate::params::ParamStore;
use crate::taskdata::TaskSample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FfnConfig {
    pub input_dim: usize,
    pub num_tasks: usize,
    pub hidden: usize,
}

impl Default for FfnConfig {
    fn default() -> Self {
        FfnConfig {
            input_dim: 10,
            num_tasks: 8,
            hidden: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfnBaseline {
    pub config: FfnConfig,
    layers: [(DenseLayer, PreluSite); 3],
    pub params: ParamStore,
}

struct Trace {
    /// Layer inputs, `[batch, in]` each.
    inputs: [Vec<f64>; 3],
    pre: [Vec<f64>; 3],
    out: Vec<f64>,
}

impl FfnBaseline {
    pub fn new(config: FfnConfig, seed: u64) -> Self {
        let n_in = config.input_dim + config.num_tasks;
        let dims = [(n_in, config.hidden), (config.hidden, config.hidden), (config.hidden, config.input_dim)];
        let layers = [0, 1, 2].map(|i| {
            (
                DenseLayer::new(&format!("ffn.layer{i}"), dims[i].0, dims[i].1),
                PreluSite::new(&format!("ffn.layer{i}")),
            )
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (l, a) in &layers {
            l.init(&mut params, &mut rng);
            a.init(&mut params, &mut rng);
        }
        FfnBaseline { config, layers, params }
    }

    fn concat_batch(&self, samples: &[TaskSample]) -> Vec<f64> {
        let mut xs = Vec::with_capacity(samples.len() * (self.config.input_dim + self.config.num_tasks));
        for s in samples {
            xs.extend_from_slice(s.input.data());
            xs.extend_from_slice(s.one_hot.data());
        }
        xs
    }

    fn forward_traced(&self, xs: Vec<f64>) -> Trace {
        let batch = xs.len() / self.layers[0].0.in_dim;
        let mut inputs: [Vec<f64>; 3] = Default::default();
        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut cur = xs;
        for (k, (layer, act)) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; batch * layer.out_dim];
            layer.forward_batch(&self.params, &cur, &mut z);
            let mut a = vec![0.0; z.len()];
            act.forward_into(&self.params, &z, &mut a);
            inputs[k] = std::mem::replace(&mut cur, a);
            pre[k] = z;
        }
        Trace { inputs, pre, out: cur }
    }

    pub fn forward(&self, x: &Tensor, one_hot: &Tensor) -> Result<Tensor> {
        let width = self.config.input_dim + self.config.num_tasks;
        if x.rank() != 1 || one_hot.rank() != 1 || x.len() + one_hot.len() != width {
            return Err(Error::dim(
                "ffn input (input ++ one-hot)",
                &[width],
                &[x.len() + one_hot.len()],
            ));
        }
        let xs = Tensor::concat(x, one_hot).into_data();
        Ok(Tensor::vector(self.forward_traced(xs).out))
    }

    /// Mean per-sample L2 loss with gradients accumulated into `params`.
    pub fn batch_loss_and_grad(&mut self, batch: &[TaskSample]) -> f64 {
        let xs = self.concat_batch(batch);
        let trace = self.forward_traced(xs);
        let dim = self.config.input_dim;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut d = vec![0.0; trace.out.len()];
        for (k, s) in batch.iter().enumerate() {
            let out = &trace.out[k * dim..(k + 1) * dim];
            loss += l2_slice(out, s.target.data());
            for (j, (o, y)) in out.iter().zip(s.target.data()).enumerate() {
                d[k * dim + j] = 2.0 * (o - y) / dim as f64 / n;
            }
        }
        for k in (0..3).rev() {
            let (layer, act) = &self.layers[k];
            act.backward_in_place(&mut self.params, &trace.pre[k], &mut d);
            if k > 0 {
                let mut dx = vec![0.0; trace.inputs[k].len()];
                layer.backward_batch(&mut self.params, &trace.inputs[k], &d, Some(&mut dx));
                d = dx;
            } else {
                layer.backward_batch(&mut self.params, &trace.inputs[k], &d, None);
            }
        }
        loss / n
    }

    pub fn batch_loss(&self, batch: &[TaskSample]) -> f64 {
        let trace = self.forward_traced(self.concat_batch(batch));
        let dim = self.config.input_dim;
        batch
            .iter()
            .enumerate()
            .map(|(k, s)| l2_slice(&trace.out[k * dim..(k + 1) * dim], s.target.data()))
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn train_step(&mut self, batch: &[TaskSample], opt: &RmspropConfig) -> f64 {
        self.params.zero_grads();
        let loss = self.batch_loss_and_grad(batch);
        rmsprop_step(&mut self.params, opt);
        loss
    }

    pub fn evaluate(&self, samples: &[TaskSample]) -> f64 {
        let chunk = 256;
        let mut total = 0.0;
        for c in samples.chunks(chunk) {
            total += self.batch_loss(c) * c.len() as f64;
        }
        total / samples.len() as f64
    }
}

pub fn ffn_forward(b: &FfnBaseline, x: &Tensor, one_hot: &Tensor) -> Result<Tensor> {
    b.forward(x, one_hot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, FnObjective};
    use crate::taskdata::{sample_batch, PrimitiveId};

    #[test]
    fn parameter_count_is_13013() {
        let b = FfnBaseline::new(FfnConfig::default(), 0);
        assert_eq!(b.params.count(), 1900 + 10100 + 1010 + 3);
        assert_eq!(b.params.count(), 13013);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut b = FfnBaseline::new(FfnConfig::default(), 0);
        b.params.zero_all_values();
        let s = &sample_batch(0, 10, 1, None).unwrap()[0];
        let y = b.forward(&s.input, &s.one_hot).unwrap();
        assert_eq!(y.shape(), &[10]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_wrong_width() {
        let b = FfnBaseline::new(FfnConfig::default(), 0);
        let err = b.forward(&Tensor::zeros(&[10]), &Tensor::zeros(&[7])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn batch_forward_matches_single() {
        let b = FfnBaseline::new(FfnConfig::default(), 4);
        let batch = sample_batch(1, 10, 5, Some(PrimitiveId::RotA)).unwrap();
        let single: f64 = batch
            .iter()
            .map(|s| crate::nn::l2_loss(&b.forward(&s.input, &s.one_hot).unwrap(), &s.target).unwrap())
            .sum::<f64>()
            / 5.0;
        assert!((b.batch_loss(&batch) - single).abs() < 1e-12);
    }

    #[test]
    fn gradient_passes_grad_check() {
        let cfg = FfnConfig { hidden: 7, ..FfnConfig::default() };
        let model = FfnBaseline::new(cfg, 3);
        let batch = sample_batch(2, 10, 4, None).unwrap();
        let mut params = model.params.clone();
        let (mut m1, mut m2) = (model.clone(), model);
        let b2 = batch.clone();
        let mut f = FnObjective {
            loss: move |p: &ParamStore| {
                m1.params = p.clone();
                m1.batch_loss(&batch)
            },
            grad: move |p: &mut ParamStore| {
                m2.params = p.clone();
                m2.params.zero_grads();
                m2.batch_loss_and_grad(&b2);
                *p = m2.params.clone();
            },
        };
        let err = grad_check(&mut f, &mut params, 1e-5);
        assert!(err <= 1e-4, "{err}");
    }
}
