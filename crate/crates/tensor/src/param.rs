//! Trainable parameters: value, accumulated gradient, and Adam moments.

use std::collections::BTreeMap;

use crate::error::TensorError;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle into a [`ParamStore`]. Stable for the lifetime of the store.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct Parameter<T: Real> {
    pub(crate) name: String,
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Vec<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
    pub(crate) step: u64,
}

impl<T: Real> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Ordered collection of parameters. Insertion order is the canonical order
/// for checkpoints and optimizer sweeps, so runs with the same construction
/// sequence stay bitwise comparable.
#[derive(Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam { name });
        }
        let id = ParamId(self.params.len());
        let numel = value.numel();
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter {
            name,
            value,
            grad: vec![T::zero(); numel],
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
            step: 0,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    /// Mutable access to a parameter's values, used by tests that nudge
    /// single coordinates and by checkpoint restore. Shape is fixed.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    /// Resets optimizer moments and step counters, e.g. after a restore.
    pub(crate) fn reset_opt_state(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
            p.m.fill(T::zero());
            p.v.fill(T::zero());
            p.step = 0;
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, delta: &[T]) {
        let g = &mut self.params[id.0].grad;
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi = *gi + *di;
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count over parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        let err = store.add("w", Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, TensorError::DuplicateParam { .. }));
    }

    #[test]
    fn gradients_accumulate_additively() {
        let mut store = ParamStore::<f32>::new();
        let w = store.add("w", Tensor::zeros(&[2])).unwrap();
        store.accumulate(w, &[1.0, 2.0]);
        store.accumulate(w, &[0.5, 0.5]);
        assert_eq!(store.grad(w), &[1.5, 2.5]);
        store.zero_grads();
        assert_eq!(store.grad(w), &[0.0, 0.0]);
    }

    #[test]
    fn prefix_counts_scalars() {
        let mut store = ParamStore::<f32>::new();
        store.add("tim.a", Tensor::zeros(&[2, 3])).unwrap();
        store.add("tim.b", Tensor::zeros(&[4])).unwrap();
        store.add("head.c", Tensor::zeros(&[5])).unwrap();
        assert_eq!(store.count_prefix("tim."), 10);
        assert_eq!(store.total_values(), 15);
    }
}
