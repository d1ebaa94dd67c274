//! Named trainable tensors with gradient and rmsprop buffers.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trainable tensor. `value`, `grad` and `cache` always share a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub cache: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let cache = Tensor::zeros(value.shape());
        Param { value, grad, cache }
    }
}

/// Ordered map from parameter name to [`Param`].
///
/// Iteration is in name order, which fixes the order of every reduction
/// and of checkpoint serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name`, replacing any previous entry.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), Param::new(value));
    }

    /// Registers a tensor drawn uniformly from `[-s, s]` with `s = 1/sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-s..=s);
        }
        self.insert(name, t);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    /// Value of a parameter the caller registered itself.
    ///
    /// Panics on an unknown name: layers only look up names they created.
    pub fn value(&self, name: &str) -> &Tensor {
        &self.param(name).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.param_mut(name).value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.param(name).grad
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.param_mut(name).grad
    }

    pub fn param(&self, name: &str) -> &Param {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn zero_all_values(&mut self) {
        for p in self.entries.values_mut() {
            p.value.fill(0.0);
        }
    }

    /// Replaces values from `other`, which must have exactly the same
    /// names and shapes. Gradients and caches are reset.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for name in other.names() {
            if !self.contains(name) {
                return Err(Error::Usage(format!("unexpected parameter {name:?}")));
            }
        }
        for (name, p) in self.entries.iter() {
            let Some(src) = other.get(name) else {
                return Err(Error::Usage(format!("missing parameter {name:?}")));
            };
            if src.value.shape() != p.value.shape() {
                return Err(Error::dim(
                    format!("parameter {name:?}"),
                    p.value.shape(),
                    src.value.shape(),
                ));
            }
        }
        for (name, p) in self.entries.iter_mut() {
            *p = Param::new(other.value(name).clone());
        }
        Ok(())
    }
}

/// Total scalar parameter count of a store.
pub fn count_params(store: &ParamStore) -> usize {
    store.count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn buffers_share_shape() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[3, 2]));
        let p = s.param("w");
        assert_eq!(p.grad.shape(), &[3, 2]);
        assert_eq!(p.cache.shape(), &[3, 2]);
    }

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        a.insert_uniform("w", &[4, 16], 16, &mut ChaCha8Rng::seed_from_u64(3));
        b.insert_uniform("w", &[4, 16], 16, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.value("w").data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn empty_store_counts_zero() {
        assert_eq!(count_params(&ParamStore::new()), 0);
    }

    #[test]
    fn load_values_checks_shapes() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::zeros(&[2]));
        let mut b = ParamStore::new();
        b.insert("w", Tensor::zeros(&[3]));
        let err = a.load_values(&b).unwrap_err();
        assert!(err.to_string().contains("\"w\""), "{err}");
    }
}
