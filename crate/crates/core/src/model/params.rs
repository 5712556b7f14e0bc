//! Named parameter store.
//!
//! Parameters are initialized from per-name random streams, so a parameter's
//! initial value depends only on `(seed, name)` and never on what other
//! parameters exist. Two models built from the same seed therefore share
//! bitwise-identical values for every parameter name they have in common.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Whether weight decay applies. Biases and attention masks are exempt.
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, decay: bool) -> Result<ParamId> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor: tensor.with_grad(),
            decay,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Weight init: uniform in `(-sqrt(1/fan_in), +sqrt(1/fan_in))`, drawn
    /// from the stream keyed by `(seed, name)`.
    pub fn add_uniform_fan_in(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fan_in: usize,
        seed: u64,
    ) -> Result<ParamId> {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut r = rng::stream(seed, name);
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| rng::uniform(&mut r, -bound, bound))
            .collect();
        self.add(name, Tensor::new(shape, data)?, true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>, decay: bool) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape), decay)
    }

    pub fn add_ones(&mut self, name: &str, shape: Vec<usize>, decay: bool) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, 1.0), decay)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Registers every parameter as a tagged leaf on `g`; index into the
    /// returned vector with `ParamId.0`.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| g.param_leaf(&e.tensor, i))
            .collect()
    }

    /// Adds the tape's tagged leaf gradients into the stored accumulators.
    pub fn absorb_grads(&mut self, g: &Graph) -> Result<()> {
        for (tag, grad) in g.param_grads() {
            self.entries[tag].tensor.accumulate_grad(grad)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_keyed_not_order_keyed() {
        let mut a = ParamStore::new();
        a.add_uniform_fan_in("x", vec![4], 4, 9).unwrap();
        a.add_uniform_fan_in("y", vec![4], 4, 9).unwrap();
        let mut b = ParamStore::new();
        b.add_uniform_fan_in("y", vec![4], 4, 9).unwrap();
        b.add_uniform_fan_in("x", vec![4], 4, 9).unwrap();
        let ax = a.entry(a.by_name("x").unwrap()).tensor.data().to_vec();
        let bx = b.entry(b.by_name("x").unwrap()).tensor.data().to_vec();
        assert_eq!(ax, bx);
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut s = ParamStore::new();
        let id = s.add_uniform_fan_in("w", vec![64, 16], 16, 3).unwrap();
        let bound = 0.25;
        assert!(s.entry(id).tensor.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add_zeros("b", vec![2], false).unwrap();
        assert!(s.add_zeros("b", vec![2], false).is_err());
    }
}
