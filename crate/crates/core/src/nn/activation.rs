use rand::Rng;

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Elementwise `max(0, x) + a * min(0, x)`.
pub fn prelu(x: &Tensor, a: f64) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = prelu_scalar(*v, a);
    }
    out
}

#[inline]
fn prelu_scalar(x: f64, a: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        a * x
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability vector from logits, with max-subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    Tensor::vector(softmax_slice(x.data()))
}

pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Gradient w.r.t. logits given the softmax output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

/// A PReLU activation with one trainable scalar slope.
#[derive(Debug, Clone, PartialEq)]
pub struct PreluSite {
    slope: String,
}

impl PreluSite {
    pub const INITIAL_SLOPE: f64 = 0.25;

    pub fn new(prefix: &str) -> Self {
        PreluSite {
            slope: format!("{prefix}.slope"),
        }
    }

    pub fn slope_name(&self) -> &str {
        &self.slope
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, _rng: &mut R) {
        params.insert(&self.slope, Tensor::vector(vec![Self::INITIAL_SLOPE]));
    }

    pub fn slope(&self, params: &ParamStore) -> f64 {
        params.value(&self.slope).data()[0]
    }

    pub(crate) fn forward_into(&self, params: &ParamStore, pre: &[f64], out: &mut [f64]) {
        let a = self.slope(params);
        for (o, &z) in out.iter_mut().zip(pre) {
            *o = prelu_scalar(z, a);
        }
    }

    /// Turns `d` from gradient w.r.t. the output into gradient w.r.t. `pre`,
    /// accumulating the slope gradient.
    pub(crate) fn backward_in_place(&self, params: &mut ParamStore, pre: &[f64], d: &mut [f64]) {
        let p = params.param_mut(&self.slope);
        let a = p.value.data()[0];
        let mut da = 0.0;
        for (di, &z) in d.iter_mut().zip(pre) {
            if z <= 0.0 {
                da += *di * z;
                *di *= a;
            }
        }
        p.grad.data_mut()[0] += da;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prelu_examples() {
        assert_eq!(prelu(&Tensor::from_slice(&[2.0, -2.0]), 0.25).data(), &[2.0, -0.5]);
        assert_eq!(prelu(&Tensor::from_slice(&[-1.0]), 0.0).data(), &[0.0]);
        assert_eq!(prelu(&Tensor::from_slice(&[-3.0]), 1.0).data(), &[-3.0]);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::from_slice(&[0.0, 0.0]));
        assert_eq!(p.data(), &[0.5, 0.5]);

        let p = softmax(&Tensor::from_slice(&[1000.0, 0.0]));
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-300);

        // exp(ln 1) : exp(ln 3) = 1 : 3
        let p = softmax(&Tensor::from_slice(&[1f64.ln(), 3f64.ln()]));
        assert!((p.data()[0] - 0.25).abs() < 1e-15);
        assert!((p.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_both_ways() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(xs in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let p = softmax_slice(&xs);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn unit_slope_prelu_is_identity(xs in prop::collection::vec(-10f64..10.0, 1..10), a in -2f64..2.0) {
            let x = Tensor::vector(xs);
            prop_assert_eq!(prelu(&prelu(&x, 1.0), a), prelu(&x, a));
        }
    }
}
