//! Noisy weight sharpening.
//!
//! `w'_i = (w_i + n_i)^gamma / sum_j (w_j + n_j)^gamma` with `n_i ~ N(0, sigma^2)`.
//! Noised weights are floored before exponentiation and the power is taken
//! in log space, so the result is a distribution for any gamma >= 1.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::WeightVector;
use crate::nn::{softmax_backward, softmax_slice};

pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub(crate) struct SharpenTrace {
    gamma: f64,
    /// Noised, floored weights.
    base: Vec<f64>,
    /// False where the floor was active.
    passes: Vec<bool>,
    pub out: Vec<f64>,
}

pub(crate) fn draw_noise<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|_| {
            let n: f64 = StandardNormal.sample(rng);
            sigma * n
        })
        .collect()
}

pub(crate) fn sharpen_traced(w: &[f64], gamma: f64, noise: &[f64], floor: f64) -> SharpenTrace {
    let mut base = Vec::with_capacity(w.len());
    let mut passes = Vec::with_capacity(w.len());
    for (wi, ni) in w.iter().zip(noise) {
        let v = wi + ni;
        passes.push(v > floor);
        base.push(v.max(floor));
    }
    let logits: Vec<f64> = base.iter().map(|v| gamma * v.ln()).collect();
    let out = softmax_slice(&logits);
    SharpenTrace {
        gamma,
        base,
        passes,
        out,
    }
}

/// Gradient w.r.t. the unsharpened weights; noise is held constant.
pub(crate) fn sharpen_backward(trace: &SharpenTrace, d_out: &[f64]) -> Vec<f64> {
    let d_logits = softmax_backward(&trace.out, d_out);
    d_logits
        .iter()
        .zip(&trace.base)
        .zip(&trace.passes)
        .map(|((d, v), &p)| if p { d * trace.gamma / v } else { 0.0 })
        .collect()
}

/// Sharpens `w` with exponent `gamma` after adding `N(0, sigma^2)` noise.
pub fn sharpen<R: Rng + ?Sized>(w: &WeightVector, gamma: f64, sigma: f64, rng: &mut R) -> WeightVector {
    sharpen_with_floor(w, gamma, sigma, DEFAULT_FLOOR, rng)
}

pub fn sharpen_with_floor<R: Rng + ?Sized>(
    w: &WeightVector,
    gamma: f64,
    sigma: f64,
    floor: f64,
    rng: &mut R,
) -> WeightVector {
    let noise = draw_noise(w.len(), sigma, rng);
    WeightVector::from_vec(sharpen_traced(w.as_slice(), gamma, &noise, floor).out)
}
