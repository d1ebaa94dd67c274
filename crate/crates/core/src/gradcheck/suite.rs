//! Finite-difference checks of every trainable component.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{grad_check_report, FnObjective};
use crate::cfn::{CfnConfig, CfnModel};
use crate::error::Result;
use crate::experiments::{FfnBaseline, FfnConfig};
use crate::nn::{l2_slice, softmax_backward, softmax_slice, DenseLayer, LstmCell, PreluSite};
use crate::params::ParamStore;
use crate::taskdata::sample_batch;
use crate::vae::{LatentLayout, VaeConfig, VaeModel};

/// Step used by [`gradient_suite`].
pub const SUITE_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub params: usize,
    pub max_error: f64,
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn run<L, G>(component: &str, mut params: ParamStore, loss: L, grad: G) -> ComponentCheck
where
    L: FnMut(&ParamStore) -> f64,
    G: FnMut(&mut ParamStore),
{
    let mut f = FnObjective { loss, grad };
    let report = grad_check_report(&mut f, &mut params, SUITE_EPS);
    ComponentCheck {
        component: component.to_string(),
        params: params.count(),
        max_error: report.max_error,
    }
}

/// Mean over rows of the per-row mean squared error, and its gradient.
fn rows_l2(ys: &[f64], ts: &[f64], width: usize) -> (f64, Vec<f64>) {
    let b = (ys.len() / width) as f64;
    let loss = ys.chunks_exact(width).zip(ts.chunks_exact(width)).map(|(y, t)| l2_slice(y, t)).sum::<f64>() / b;
    let grad = ys.iter().zip(ts).map(|(y, t)| 2.0 * (y - t) / (width as f64 * b)).collect();
    (loss, grad)
}

fn check_dense(rng: &mut ChaCha8Rng) -> ComponentCheck {
    let layer = DenseLayer::new("dense", 5, 4);
    let mut params = ParamStore::new();
    layer.init(&mut params, rng);
    let xs = normals(rng, 3 * 5);
    let ts = normals(rng, 3 * 4);
    let (l1, l2) = (layer.clone(), layer);
    let (x1, t1, x2, t2) = (xs.clone(), ts.clone(), xs, ts);
    run(
        "dense",
        params,
        move |p| {
            let mut ys = vec![0.0; 12];
            l1.forward_batch(p, &x1, &mut ys);
            rows_l2(&ys, &t1, 4).0
        },
        move |p| {
            let mut ys = vec![0.0; 12];
            l2.forward_batch(p, &x2, &mut ys);
            let (_, d) = rows_l2(&ys, &t2, 4);
            l2.backward_batch(p, &x2, &d, None);
        },
    )
}

fn check_prelu(rng: &mut ChaCha8Rng) -> ComponentCheck {
    let layer = DenseLayer::new("dense", 5, 4);
    let site = PreluSite::new("act");
    let mut params = ParamStore::new();
    layer.init(&mut params, rng);
    site.init(&mut params, rng);
    let xs = normals(rng, 3 * 5);
    let ts = normals(rng, 3 * 4);
    let forward = move |p: &ParamStore, l: &DenseLayer, s: &PreluSite, xs: &[f64]| {
        let mut pre = vec![0.0; 12];
        l.forward_batch(p, xs, &mut pre);
        let mut out = vec![0.0; 12];
        s.forward_into(p, &pre, &mut out);
        (pre, out)
    };
    let (l1, s1, l2, s2) = (layer.clone(), site.clone(), layer, site);
    let (x1, t1, x2, t2) = (xs.clone(), ts.clone(), xs, ts);
    run(
        "prelu",
        params,
        move |p| rows_l2(&forward(p, &l1, &s1, &x1).1, &t1, 4).0,
        move |p| {
            let (pre, out) = forward(p, &l2, &s2, &x2);
            let (_, mut d) = rows_l2(&out, &t2, 4);
            s2.backward_in_place(p, &pre, &mut d);
            l2.backward_batch(p, &x2, &d, None);
        },
    )
}

fn check_softmax_head(rng: &mut ChaCha8Rng) -> ComponentCheck {
    let layer = DenseLayer::new("head", 5, 4);
    let mut params = ParamStore::new();
    layer.init(&mut params, rng);
    let xs = normals(rng, 3 * 5);
    let ts: Vec<f64> = (0..3).flat_map(|_| softmax_slice(&normals(rng, 4))).collect();
    let probs = move |p: &ParamStore, l: &DenseLayer, xs: &[f64]| {
        let mut logits = vec![0.0; 12];
        l.forward_batch(p, xs, &mut logits);
        logits.chunks_exact(4).flat_map(softmax_slice).collect::<Vec<f64>>()
    };
    let (l1, l2) = (layer.clone(), layer);
    let (x1, t1, x2, t2) = (xs.clone(), ts.clone(), xs, ts);
    run(
        "softmax-head",
        params,
        move |p| rows_l2(&probs(p, &l1, &x1), &t1, 4).0,
        move |p| {
            let pr = probs(p, &l2, &x2);
            let (_, dp) = rows_l2(&pr, &t2, 4);
            let d: Vec<f64> = pr
                .chunks_exact(4)
                .zip(dp.chunks_exact(4))
                .flat_map(|(a, b)| softmax_backward(a, b))
                .collect();
            l2.backward_batch(p, &x2, &d, None);
        },
    )
}

fn check_lstm(rng: &mut ChaCha8Rng) -> ComponentCheck {
    const STEPS: usize = 4;
    let cell = LstmCell::new("lstm", 3, 4);
    let mut params = ParamStore::new();
    cell.init(&mut params, rng);
    let xs = normals(rng, STEPS * 3);
    let ts = normals(rng, STEPS * 4);
    let (mut c1, mut c2) = (cell.clone(), cell);
    let (x1, t1, x2, t2) = (xs.clone(), ts.clone(), xs, ts);
    run(
        "lstm",
        params,
        move |p| {
            c1.reset();
            let mut loss = 0.0;
            for (x, t) in x1.chunks_exact(3).zip(t1.chunks_exact(4)) {
                loss += l2_slice(&c1.step_traced(x, p).h, t);
            }
            loss
        },
        move |p| {
            c2.reset();
            let traces: Vec<_> = x2.chunks_exact(3).map(|x| c2.step_traced(x, p)).collect();
            let mut dh_next = vec![0.0; 4];
            let mut dc_next: Option<Vec<f64>> = None;
            for (trace, t) in traces.iter().zip(t2.chunks_exact(4)).rev() {
                let dh: Vec<f64> = trace.h.iter().zip(t).zip(&dh_next).map(|((h, t), n)| 0.5 * (h - t) + n).collect();
                let g = c2.backward(p, trace, &dh, dc_next.as_deref());
                dh_next = g.dh_prev;
                dc_next = Some(g.dc_prev);
            }
        },
    )
}

fn check_vae(seed: u64) -> Result<ComponentCheck> {
    let config = VaeConfig {
        side: 8,
        hidden: 6,
        encoder_out: 5,
        layout: LatentLayout::new(5)?,
        batch_size: 3,
        ..VaeConfig::default()
    };
    let model = VaeModel::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ae);
    let xs: Vec<f64> = (0..3 * 64).map(|_| rng.gen::<f64>()).collect();
    let eps = normals(&mut rng, 3 * 5);
    let params = model.params.clone();
    let (mut a, mut b) = (model.clone(), model);
    let (x1, e1, x2, e2) = (xs.clone(), eps.clone(), xs, eps);
    Ok(run(
        "vae",
        params,
        move |p| {
            a.params = p.clone();
            a.batch_loss(&x1, &e1)
        },
        move |p| {
            b.params = p.clone();
            b.batch_gradient(&x2, &e2);
            *p = b.params.clone();
        },
    ))
}

fn check_cfn(seed: u64, gamma: f64) -> Result<ComponentCheck> {
    let model = CfnModel::new(CfnConfig::default(), seed)?;
    let batch = sample_batch(seed ^ 0xcf, model.config.input_dim, 4, None)?;
    let noises = vec![vec![0.0; model.config.num_functions]; batch.len()];
    let params = model.params.clone();
    let (mut m1, mut m2) = (model.clone(), model);
    let (b1, n1, b2, n2) = (batch.clone(), noises.clone(), batch, noises);
    Ok(run(
        &format!("cfn (gamma {gamma})"),
        params,
        move |p| {
            m1.params = p.clone();
            m1.batch_loss(&b1, gamma, &n1)
        },
        move |p| {
            m2.params = p.clone();
            m2.params.zero_grads();
            m2.batch_loss_and_grad(&b2, gamma, &n2);
            *p = m2.params.clone();
        },
    ))
}

fn check_ffn(seed: u64) -> Result<ComponentCheck> {
    let model = FfnBaseline::new(FfnConfig::default(), seed);
    let batch = sample_batch(seed ^ 0xff, model.config.input_dim, 4, None)?;
    let params = model.params.clone();
    let (mut m1, mut m2) = (model.clone(), model);
    let (b1, b2) = (batch.clone(), batch);
    Ok(run(
        "ffn",
        params,
        move |p| {
            m1.params = p.clone();
            m1.batch_loss(&b1)
        },
        move |p| {
            m2.params = p.clone();
            m2.params.zero_grads();
            m2.batch_loss_and_grad(&b2);
            *p = m2.params.clone();
        },
    ))
}

/// Runs the central-difference check on dense, PReLU, LSTM, softmax head,
/// VAE, CFN (noise off) and FFN gradients, all seeded from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_dense(&mut rng),
        check_prelu(&mut rng),
        check_softmax_head(&mut rng),
        check_lstm(&mut rng),
        check_vae(seed)?,
        check_cfn(seed, 1.0)?,
        check_cfn(seed, 5.0)?,
        check_ffn(seed)?,
    ])
}
