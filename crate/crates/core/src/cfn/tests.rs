use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{grad_check, FnObjective};
use crate::taskdata::{sample_batch, PrimitiveId, TaskSampler};

fn small_config() -> CfnConfig {
    CfnConfig {
        input_dim: 4,
        num_tasks: 8,
        num_functions: 3,
        controller_hidden: 5,
        ..CfnConfig::default()
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(1)
}

#[test]
fn controller_weights_are_a_distribution() {
    let mut m = CfnModel::new(CfnConfig::default(), 3).unwrap();
    for s in sample_batch(4, 10, 20, None).unwrap() {
        m.reset();
        let w = m.controller_weights(&s.input, &s.one_hot).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(w.as_slice().iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn zero_parameters_give_uniform_weights() {
    let mut m = CfnModel::new(CfnConfig::default(), 3).unwrap();
    m.params.zero_all_values();
    let s = &sample_batch(4, 10, 1, None).unwrap()[0];
    let w = m.controller_weights(&s.input, &s.one_hot).unwrap();
    assert!(w.as_slice().iter().all(|v| (v - 0.125).abs() < 1e-15));
}

#[test]
fn controller_is_deterministic_after_reset() {
    let mut m = CfnModel::new(CfnConfig::default(), 3).unwrap();
    let s = &sample_batch(4, 10, 1, None).unwrap()[0];
    let a = m.controller_weights(&s.input, &s.one_hot).unwrap();
    m.reset();
    let b = m.controller_weights(&s.input, &s.one_hot).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_hot_weights_select_a_function() {
    let m = CfnModel::new(small_config(), 5).unwrap();
    let x = Tensor::from_slice(&[0.1, 0.7, 0.3, 0.9]);
    for i in 0..3 {
        let out = m.mix_with_weights(&x, &WeightVector::one_hot(3, i)).unwrap();
        assert_eq!(out, m.function_output(i, &x).unwrap());
    }
}

#[test]
fn identical_functions_ignore_weights() {
    let mut m = CfnModel::new(small_config(), 5).unwrap();
    for name in ["weight", "bias", "slope"] {
        let src = m.params.value(&format!("function0.{name}")).clone();
        for i in 1..3 {
            *m.params.value_mut(&format!("function{i}.{name}")) = src.clone();
        }
    }
    let x = Tensor::from_slice(&[0.1, 0.7, 0.3, 0.9]);
    let f0 = m.function_output(0, &x).unwrap();
    let oh = PrimitiveId::Switch.one_hot();
    let (out, _) = m.forward(&x, &oh, 4.0, 0.05, &mut rng()).unwrap();
    for (a, b) in out.data().iter().zip(f0.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hand_set_two_function_mixture() {
    let cfg = CfnConfig {
        input_dim: 2,
        num_functions: 2,
        ..small_config()
    };
    let mut m = CfnModel::new(cfg, 0).unwrap();
    // f1(x) = prelu([[1,0],[0,2]] x + [0, -1]), f2(x) = prelu([[0,1],[1,0]] x)
    *m.params.value_mut("function0.weight") = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
    *m.params.value_mut("function0.bias") = Tensor::from_slice(&[0.0, -1.0]);
    *m.params.value_mut("function1.weight") = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    *m.params.value_mut("function1.bias") = Tensor::from_slice(&[0.0, 0.0]);
    let x = Tensor::from_slice(&[0.5, 0.25]);
    // f1 = prelu([0.5, -0.5]) = [0.5, -0.125]; f2 = [0.25, 0.5]
    let out = m.mix_with_weights(&x, &WeightVector::from_vec(vec![0.3, 0.7])).unwrap();
    let expected = [0.3 * 0.5 + 0.7 * 0.25, 0.3 * -0.125 + 0.7 * 0.5];
    for (a, b) in out.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut m = CfnModel::new(small_config(), 0).unwrap();
    let bad = Tensor::from_slice(&[0.0; 3]);
    assert!(m.controller_weights(&bad, &PrimitiveId::Zero.one_hot()).is_err());
    assert!(m
        .forward(&Tensor::from_slice(&[0.0; 4]), &Tensor::from_slice(&[1.0]), 1.0, 0.0, &mut rng())
        .is_err());
}

fn check_end_to_end(gamma: f64) -> f64 {
    let mut model = CfnModel::new(small_config(), 21).unwrap();
    let batch = sample_batch(8, 4, 6, None).unwrap();
    let noises = vec![vec![0.0; 3]; batch.len()];
    let mut params = model.params.clone();
    let mut m1 = model.clone();
    let mut m2 = model.clone();
    let (b2, n2) = (batch.clone(), noises.clone());
    let mut f = FnObjective {
        loss: move |p: &ParamStore| {
            m1.params = p.clone();
            m1.batch_loss(&batch, gamma, &noises)
        },
        grad: move |p: &mut ParamStore| {
            m2.params = p.clone();
            m2.params.zero_grads();
            m2.batch_loss_and_grad(&b2, gamma, &n2);
            *p = m2.params.clone();
        },
    };
    model.params.zero_grads();
    grad_check(&mut f, &mut params, 1e-5)
}

#[test]
fn end_to_end_gradient_passes_grad_check() {
    for gamma in [1.0, 3.0] {
        let err = check_end_to_end(gamma);
        assert!(err <= 1e-4, "gamma {gamma}: {err}");
    }
}

#[test]
fn controller_gradient_needs_no_function_derivatives() {
    let fns: Vec<OpaqueFn> = vec![
        Arc::new(|x: &[f64]| x.iter().map(|v| (v * 4.0).floor()).collect()),
        Arc::new(|x: &[f64]| x.iter().map(|v| if *v > 0.5 { 1.0 } else { -1.0 }).collect()),
        Arc::new(|x: &[f64]| x.iter().rev().copied().collect()),
    ];
    let model = CfnModel::new(small_config(), 4).unwrap().with_opaque_functions(fns).unwrap();
    assert!(model.params.names().all(|n| n.starts_with("controller.")));
    let batch = sample_batch(9, 4, 5, None).unwrap();
    let noises = vec![vec![0.0; 3]; batch.len()];
    let mut params = model.params.clone();
    let (mut m1, mut m2) = (model.clone(), model);
    let b2 = batch.clone();
    let n2 = noises.clone();
    let mut f = FnObjective {
        loss: move |p: &ParamStore| {
            m1.params = p.clone();
            m1.batch_loss(&batch, 2.0, &noises)
        },
        grad: move |p: &mut ParamStore| {
            m2.params = p.clone();
            m2.params.zero_grads();
            m2.batch_loss_and_grad(&b2, 2.0, &n2);
            *p = m2.params.clone();
        },
    };
    let err = grad_check(&mut f, &mut params, 1e-5);
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn loss_is_finite_under_heavy_sharpening() {
    let mut m = CfnModel::new(CfnConfig::default(), 2).unwrap();
    m.config.sharpen_gamma = Schedule::constant(100.0);
    let mut sampler = TaskSampler::new(3, 10).unwrap();
    let mut r = rng();
    for step in 0..20 {
        let loss = m.train_step(&sampler.batch(20, None), step, &RmspropConfig::default(), &mut r);
        assert!(loss.is_finite());
    }
    assert!(m.params.iter().all(|(_, p)| p.value.is_finite()));
}

#[test]
fn learns_the_zero_primitive() {
    let mut m = CfnModel::new(CfnConfig::default(), 7).unwrap();
    let opt = RmspropConfig {
        learning_rate: 0.005,
        ..RmspropConfig::default()
    };
    let mut sampler = TaskSampler::new(11, 10).unwrap();
    let val = sample_batch(12, 10, 200, Some(PrimitiveId::Zero)).unwrap();
    let mut r = rng();
    let before = m.evaluate(&val, 1.0).loss;
    for step in 0..1500 {
        m.train_step(&sampler.batch(20, Some(PrimitiveId::Zero)), step, &opt, &mut r);
    }
    let after = m.evaluate(&val, m.config.sharpen_gamma.value(1500)).loss;
    assert!(after < 1e-3 && after < before, "{before} -> {after}");
}

#[test]
fn disentanglement_endpoints() {
    let one_hot: Vec<_> = (0..8).map(|i| WeightVector::one_hot(8, i)).collect();
    assert_eq!(disentanglement(&one_hot), 1.0);
    let uniform = vec![WeightVector::uniform(8); 4];
    assert!((disentanglement(&uniform) - 0.125f64.sqrt()).abs() < 1e-12);
    let half = [WeightVector::from_vec(vec![0.5, 0.5])];
    assert!((disentanglement(&half) - 0.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn default_parameter_count() {
    let m = CfnModel::new(CfnConfig::default(), 0).unwrap();
    assert_eq!(m.params.count(), 2176);
}
