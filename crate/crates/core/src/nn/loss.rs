use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared error: sum of squared differences over element count.
pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("l2_loss", target.shape(), pred.shape()));
    }
    Ok(l2_slice(pred.data(), target.data()))
}

pub(crate) fn l2_slice(pred: &[f64], target: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    s / pred.len() as f64
}

/// Gradient of [`l2_loss`] w.r.t. `pred`.
pub fn l2_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("l2_loss_grad", target.shape(), pred.shape()));
    }
    let n = pred.len() as f64;
    let g = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok(Tensor::vector(g))
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I))`.
pub fn gaussian_kl_to_standard(mu: &Tensor, sigma: &Tensor) -> Result<f64> {
    if mu.shape() != sigma.shape() {
        return Err(Error::dim("gaussian_kl_to_standard", mu.shape(), sigma.shape()));
    }
    if let Some(s) = sigma.data().iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("sigma must be positive, got {s}")));
    }
    Ok(kl_slice(mu.data(), sigma.data()))
}

pub(crate) fn kl_slice(mu: &[f64], sigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| m * m + s * s - (s * s).ln() - 1.0)
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::from_slice(x)
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(l2_loss(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(l2_loss(&v(&[3.0]), &v(&[1.0])).unwrap(), 4.0);
        assert!(l2_loss(&v(&[3.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl_to_standard(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(gaussian_kl_to_standard(&v(&[1.0]), &v(&[1.0])).unwrap(), 0.5);
        assert!(matches!(
            gaussian_kl_to_standard(&v(&[0.0]), &v(&[0.0])),
            Err(Error::Domain(_))
        ));
        assert!(gaussian_kl_to_standard(&v(&[0.0]), &v(&[-1.0])).is_err());
    }

    /// Integrates `q(z) ln(q(z)/p(z))` with composite Simpson's rule.
    fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
        let ln_q = |z: f64| {
            -0.5 * ((z - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        };
        let ln_p = |z: f64| -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let f = |z: f64| ln_q(z).exp() * (ln_q(z) - ln_p(z));
        let (a, b) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn kl_matches_quadrature() {
        let oracle = kl_quadrature(0.3, 0.7);
        let analytic = gaussian_kl_to_standard(&v(&[0.3]), &v(&[0.7])).unwrap();
        assert!((oracle - analytic).abs() < 1e-6, "{oracle} vs {analytic}");
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            mu in prop::collection::vec(-5f64..5.0, 1..6),
            log_s in prop::collection::vec(-3f64..3.0, 6),
        ) {
            let sigma: Vec<f64> = log_s[..mu.len()].iter().map(|l| l.exp()).collect();
            let kl = gaussian_kl_to_standard(&v(&mu), &v(&sigma)).unwrap();
            prop_assert!(kl >= 0.0);
            if kl <= 1e-12 {
                prop_assert!(mu.iter().all(|m| m.abs() < 1e-5));
                prop_assert!(sigma.iter().all(|s| (s - 1.0).abs() < 1e-5));
            }
        }
    }
}
