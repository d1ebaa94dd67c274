//! Central finite-difference gradient checking.

use std::collections::BTreeMap;

use crate::params::ParamStore;

mod suite;

pub use suite::{gradient_suite, ComponentCheck, SUITE_EPS};

/// A deterministic scalar function of a parameter store with an analytic gradient.
pub trait Objective {
    fn loss(&mut self, params: &ParamStore) -> f64;

    /// Overwrites the gradient buffers in `params` with the analytic gradient.
    fn gradient(&mut self, params: &mut ParamStore);
}

/// Builds an [`Objective`] from a loss closure and a gradient closure.
pub struct FnObjective<L, G> {
    pub loss: L,
    pub grad: G,
}

impl<L, G> Objective for FnObjective<L, G>
where
    L: FnMut(&ParamStore) -> f64,
    G: FnMut(&mut ParamStore),
{
    fn loss(&mut self, params: &ParamStore) -> f64 {
        (self.loss)(params)
    }

    fn gradient(&mut self, params: &mut ParamStore) {
        (self.grad)(params)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest error per parameter tensor.
    pub per_param: BTreeMap<String, f64>,
    pub max_error: f64,
}

/// Max over all scalar parameters of `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<O: Objective + ?Sized>(f: &mut O, params: &mut ParamStore, eps: f64) -> f64 {
    grad_check_report(f, params, eps).max_error
}

pub fn grad_check_report<O: Objective + ?Sized>(
    f: &mut O,
    params: &mut ParamStore,
    eps: f64,
) -> GradCheckReport {
    assert!(eps > 0.0 && eps <= 1e-2, "eps must be in (0, 1e-2]");
    params.zero_grads();
    f.gradient(params);
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(n, p)| (n.to_string(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport::default();
    for (name, grads) in analytic {
        let mut worst: f64 = 0.0;
        for (k, &g) in grads.iter().enumerate() {
            let orig = params.value(&name).data()[k];
            params.value_mut(&name).data_mut()[k] = orig + eps;
            let up = f.loss(params);
            params.value_mut(&name).data_mut()[k] = orig - eps;
            let down = f.loss(params);
            params.value_mut(&name).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max((g - numeric).abs() / numeric.abs().max(1.0));
        }
        report.max_error = report.max_error.max(worst);
        report.per_param.insert(name, worst);
    }
    params.zero_grads();
    report
}
