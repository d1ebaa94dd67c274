use rand::Rng;

use super::activation::sigmoid;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{axpy, dot, Tensor};

/// Recurrent state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// Single LSTM cell with separate input-to-hidden and hidden-to-hidden
/// affine maps (each with its own bias). Gate rows are stacked
/// `[input, forget, candidate, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_ih: String,
    w_hh: String,
    b_ih: String,
    b_hh: String,
    state: LstmState,
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked like the weight rows.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

impl LstmCell {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            input_dim,
            hidden_dim,
            w_ih: format!("{prefix}.w_ih"),
            w_hh: format!("{prefix}.w_hh"),
            b_ih: format!("{prefix}.b_ih"),
            b_hh: format!("{prefix}.b_hh"),
            state: LstmState {
                h: Tensor::zeros(&[hidden_dim]),
                c: Tensor::zeros(&[hidden_dim]),
            },
        }
    }

    pub fn param_names(&self) -> [&str; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    pub fn param_count(&self) -> usize {
        let g = 4 * self.hidden_dim;
        g * (self.input_dim + self.hidden_dim) + 2 * g
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) {
        let (n_in, n_h) = (self.input_dim, self.hidden_dim);
        params.insert_uniform(&self.w_ih, &[4 * n_h, n_in], n_in, rng);
        params.insert_uniform(&self.w_hh, &[4 * n_h, n_h], n_h, rng);
        params.insert_uniform(&self.b_ih, &[4 * n_h], n_in, rng);
        params.insert_uniform(&self.b_hh, &[4 * n_h], n_h, rng);
    }

    pub fn state(&self) -> &LstmState {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.h.fill(0.0);
        self.state.c.fill(0.0);
    }

    /// Advances the cell one step and returns the new hidden state.
    pub fn step(&mut self, x: &Tensor, params: &ParamStore) -> Result<Tensor> {
        if x.shape() != [self.input_dim] {
            return Err(Error::dim(
                format!("lstm cell {}", self.w_ih),
                &[self.input_dim],
                x.shape(),
            ));
        }
        let trace = self.step_traced(x.data(), params);
        Ok(Tensor::vector(trace.h))
    }

    pub(crate) fn step_traced(&mut self, x: &[f64], params: &ParamStore) -> LstmTrace {
        let n_h = self.hidden_dim;
        let w_ih = params.value(&self.w_ih).data();
        let w_hh = params.value(&self.w_hh).data();
        let b_ih = params.value(&self.b_ih).data();
        let b_hh = params.value(&self.b_hh).data();
        let h_prev = self.state.h.data().to_vec();
        let c_prev = self.state.c.data().to_vec();

        let mut gates = vec![0.0; 4 * n_h];
        for (r, g) in gates.iter_mut().enumerate() {
            let a = dot(&w_ih[r * self.input_dim..(r + 1) * self.input_dim], x)
                + dot(&w_hh[r * n_h..(r + 1) * n_h], &h_prev)
                + b_ih[r]
                + b_hh[r];
            *g = if (2 * n_h..3 * n_h).contains(&r) {
                a.tanh()
            } else {
                sigmoid(a)
            };
        }
        let (i, rest) = gates.split_at(n_h);
        let (f, rest) = rest.split_at(n_h);
        let (g, o) = rest.split_at(n_h);
        let c: Vec<f64> = (0..n_h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n_h).map(|k| o[k] * tanh_c[k]).collect();

        self.state.h.data_mut().copy_from_slice(&h);
        self.state.c.data_mut().copy_from_slice(&c);
        LstmTrace {
            x: x.to_vec(),
            h_prev,
            c_prev,
            gates,
            tanh_c,
            h,
        }
    }

    /// Backpropagates `dh` (and `dc` from a later step) through one step,
    /// accumulating parameter gradients.
    pub(crate) fn backward(
        &self,
        params: &mut ParamStore,
        trace: &LstmTrace,
        dh: &[f64],
        dc_next: Option<&[f64]>,
    ) -> LstmGrads {
        let n_h = self.hidden_dim;
        let n_in = self.input_dim;
        let (i, rest) = trace.gates.split_at(n_h);
        let (f, rest) = rest.split_at(n_h);
        let (g, o) = rest.split_at(n_h);

        // Gradient w.r.t. gate pre-activations.
        let mut da = vec![0.0; 4 * n_h];
        let mut dc_prev = vec![0.0; n_h];
        for k in 0..n_h {
            let do_ = dh[k] * trace.tanh_c[k];
            let dc = dh[k] * o[k] * (1.0 - trace.tanh_c[k] * trace.tanh_c[k])
                + dc_next.map_or(0.0, |d| d[k]);
            da[k] = dc * g[k] * i[k] * (1.0 - i[k]);
            da[n_h + k] = dc * trace.c_prev[k] * f[k] * (1.0 - f[k]);
            da[2 * n_h + k] = dc * i[k] * (1.0 - g[k] * g[k]);
            da[3 * n_h + k] = do_ * o[k] * (1.0 - o[k]);
            dc_prev[k] = dc * f[k];
        }

        for name in [&self.b_ih, &self.b_hh] {
            let gb = params.grad_mut(name).data_mut();
            for (gv, d) in gb.iter_mut().zip(&da) {
                *gv += d;
            }
        }

        let mut dx = vec![0.0; n_in];
        {
            let p = params.param_mut(&self.w_ih);
            let w = p.value.data();
            let gw = p.grad.data_mut();
            for (r, &d) in da.iter().enumerate() {
                axpy(d, &trace.x, &mut gw[r * n_in..(r + 1) * n_in]);
                axpy(d, &w[r * n_in..(r + 1) * n_in], &mut dx);
            }
        }
        let mut dh_prev = vec![0.0; n_h];
        {
            let p = params.param_mut(&self.w_hh);
            let w = p.value.data();
            let gw = p.grad.data_mut();
            for (r, &d) in da.iter().enumerate() {
                axpy(d, &trace.h_prev, &mut gw[r * n_h..(r + 1) * n_h]);
                axpy(d, &w[r * n_h..(r + 1) * n_h], &mut dh_prev);
            }
        }
        LstmGrads {
            dx,
            dh_prev,
            dc_prev,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_cell() -> (LstmCell, ParamStore) {
        let cell = LstmCell::new("ctl", 3, 2);
        let mut params = ParamStore::new();
        cell.init(&mut params, &mut ChaCha8Rng::seed_from_u64(11));
        (cell, params)
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let (mut cell, mut params) = seeded_cell();
        params.zero_all_values();
        let h = cell.step(&Tensor::from_slice(&[0.3, -1.0, 2.0]), &params).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn reset_makes_step_pure() {
        let (mut cell, params) = seeded_cell();
        let x = Tensor::from_slice(&[0.3, -1.0, 2.0]);
        let a = cell.step(&x, &params).unwrap();
        let b = cell.step(&x, &params).unwrap();
        assert_ne!(a, b, "state should carry between steps");
        cell.reset();
        let c = cell.step(&x, &params).unwrap();
        assert_eq!(a, c);
    }

    /// Scalar re-derivation of the gate equations, written without the
    /// stacked-row layout.
    #[test]
    fn matches_scalar_reference() {
        let (mut cell, params) = seeded_cell();
        let x = [0.3, -1.0, 2.0];
        let h_prev = [0.1, -0.2];
        let c_prev = [0.5, 0.25];
        cell.state.h = Tensor::from_slice(&h_prev);
        cell.state.c = Tensor::from_slice(&c_prev);
        let h = cell.step(&Tensor::from_slice(&x), &params).unwrap();

        let w_ih = params.value("ctl.w_ih").data();
        let w_hh = params.value("ctl.w_hh").data();
        let b_ih = params.value("ctl.b_ih").data();
        let b_hh = params.value("ctl.b_hh").data();
        let pre = |gate: usize, k: usize| {
            let r = gate * 2 + k;
            let mut s = b_ih[r] + b_hh[r];
            for j in 0..3 {
                s += w_ih[r * 3 + j] * x[j];
            }
            for j in 0..2 {
                s += w_hh[r * 2 + j] * h_prev[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for k in 0..2 {
            let i = sig(pre(0, k));
            let f = sig(pre(1, k));
            let g = pre(2, k).tanh();
            let o = sig(pre(3, k));
            let c = f * c_prev[k] + i * g;
            let expected = o * c.tanh();
            assert!((h.data()[k] - expected).abs() < 1e-14);
            assert!((cell.state().c.data()[k] - c).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let (mut cell, params) = seeded_cell();
        assert!(matches!(
            cell.step(&Tensor::from_slice(&[1.0]), &params),
            Err(Error::Dimension { .. })
        ));
    }
}
