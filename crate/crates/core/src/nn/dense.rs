use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{axpy, dot, Tensor};

/// Affine map `W x + b` with `W: [out_dim, in_dim]`, `b: [out_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: String,
    bias: Option<String>,
}

impl DenseLayer {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weight: format!("{prefix}.weight"),
            bias: Some(format!("{prefix}.bias")),
        }
    }

    /// A bias-free linear map.
    pub fn linear(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            bias: None,
            ..Self::new(prefix, in_dim, out_dim)
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.weight
    }

    pub fn bias_name(&self) -> Option<&str> {
        self.bias.as_deref()
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        params.insert_uniform(&self.weight, &[self.out_dim, self.in_dim], self.in_dim, rng);
        if let Some(b) = &self.bias {
            params.insert_uniform(b, &[self.out_dim], self.in_dim, rng);
        }
    }

    pub fn forward(&self, x: &Tensor, params: &ParamStore) -> Result<Tensor> {
        if x.shape() != [self.in_dim] {
            return Err(Error::dim(
                format!("dense layer {}", self.weight),
                &[self.in_dim],
                x.shape(),
            ));
        }
        let mut out = vec![0.0; self.out_dim];
        self.forward_batch(params, x.data(), &mut out);
        Ok(Tensor::vector(out))
    }

    /// Row-major batch forward: `xs` is `[batch, in_dim]`, `ys` is `[batch, out_dim]`.
    pub(crate) fn forward_batch(&self, params: &ParamStore, xs: &[f64], ys: &mut [f64]) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        let batch = xs.len() / n_in;
        debug_assert_eq!(ys.len(), batch * n_out);
        let w = params.value(&self.weight).data();
        let b = self.bias.as_ref().map(|b| params.value(b).data());
        for (o, row) in w.chunks_exact(n_in).enumerate() {
            let bias = b.map_or(0.0, |b| b[o]);
            for (k, x) in xs.chunks_exact(n_in).enumerate() {
                ys[k * n_out + o] = dot(row, x) + bias;
            }
        }
    }

    /// Accumulates parameter gradients for a batch and, if requested,
    /// overwrites `dxs` with the gradient w.r.t. the inputs.
    pub(crate) fn backward_batch(
        &self,
        params: &mut ParamStore,
        xs: &[f64],
        dys: &[f64],
        mut dxs: Option<&mut [f64]>,
    ) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        let batch = xs.len() / n_in;
        debug_assert_eq!(dys.len(), batch * n_out);
        if let Some(dx) = dxs.as_deref_mut() {
            dx.fill(0.0);
        }
        if let Some(b) = &self.bias {
            let gb = params.grad_mut(b).data_mut();
            for dy in dys.chunks_exact(n_out) {
                for (g, d) in gb.iter_mut().zip(dy) {
                    *g += d;
                }
            }
        }
        let p = params.param_mut(&self.weight);
        let w = p.value.data();
        let gw = p.grad.data_mut();
        for (o, (row, grow)) in w.chunks_exact(n_in).zip(gw.chunks_exact_mut(n_in)).enumerate() {
            for k in 0..batch {
                let d = dys[k * n_out + o];
                if d == 0.0 {
                    continue;
                }
                axpy(d, &xs[k * n_in..(k + 1) * n_in], grow);
                if let Some(dx) = dxs.as_deref_mut() {
                    axpy(d, row, &mut dx[k * n_in..(k + 1) * n_in]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_with(w: &[f64], b: &[f64]) -> (DenseLayer, ParamStore) {
        let layer = DenseLayer::new("l", 2, 2);
        let mut params = ParamStore::new();
        params.insert(layer.weight_name(), Tensor::matrix(2, 2, w.to_vec()).unwrap());
        params.insert(layer.bias_name().unwrap(), Tensor::from_slice(b));
        (layer, params)
    }

    #[test]
    fn identity_weight() {
        let (l, p) = layer_with(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        let y = l.forward(&Tensor::from_slice(&[3.0, 4.0]), &p).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn zero_weight_returns_bias() {
        let (l, p) = layer_with(&[0.0; 4], &[1.0, 2.0]);
        let y = l.forward(&Tensor::from_slice(&[-7.0, 9.0]), &p).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn hand_matrix_multiply() {
        // [[1,2],[3,4]] . [1,1] = [3, 7]
        let (l, p) = layer_with(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0]);
        let y = l.forward(&Tensor::from_slice(&[1.0, 1.0]), &p).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let (l, p) = layer_with(&[0.0; 4], &[0.0; 2]);
        let err = l.forward(&Tensor::from_slice(&[1.0; 3]), &p).unwrap_err();
        assert!(err.to_string().contains("l.weight"), "{err}");
    }
}
