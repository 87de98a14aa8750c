use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named learnable arrays, iterated in sorted-name order.
///
/// Every entry is initialized from its own generator, seeded by mixing the
/// store seed with a digest of the entry name, so the value of one parameter
/// does not depend on which other parameters were created before it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Inserts a tensor under `name`. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, tensor.with_requires_grad(true));
        Ok(())
    }

    /// Replaces the value of an existing entry, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::dim(format!(
                "parameter {name} has shape {:?}, new value has {:?}",
                slot.shape(),
                tensor.shape()
            )));
        }
        *slot = tensor.with_requires_grad(true);
        Ok(())
    }

    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn init_glorot(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = self.rng_for(name);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Generator dedicated to `name` under this store's seed.
    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let digest = Sha256::digest(name.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.rng_seed ^ u64::from_le_bytes(head))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
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
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        self.entries.values_mut().for_each(Tensor::clear_grad);
    }

    /// True when every entry is bit-identical to `other`, ignoring gradients.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((a, x), (b, y))| {
                a == b
                    && x.shape() == y.shape()
                    && x.data()
                        .iter()
                        .zip(y.data())
                        .all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_values() {
        let build = |seed| {
            let mut p = ParamStore::new(seed);
            p.init_glorot("b.weight", &[4, 3], 4, 3).unwrap();
            p.init_glorot("a.weight", &[2, 2], 2, 2).unwrap();
            p
        };
        assert!(build(3).same_values(&build(3)));
        assert!(!build(3).same_values(&build(4)));
    }

    #[test]
    fn creation_order_does_not_matter() {
        let mut p = ParamStore::new(9);
        p.init_glorot("x", &[3], 3, 1).unwrap();
        p.init_glorot("y", &[3], 3, 1).unwrap();
        let mut q = ParamStore::new(9);
        q.init_glorot("y", &[3], 3, 1).unwrap();
        q.init_glorot("x", &[3], 3, 1).unwrap();
        assert!(p.same_values(&q));
    }

    #[test]
    fn glorot_bound_respected() {
        let mut p = ParamStore::new(1);
        p.init_glorot("w", &[50, 10], 50, 10).unwrap();
        let bound = (6.0f64 / 60.0).sqrt();
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() < bound));
        assert!(p.get("w").unwrap().requires_grad());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new(1);
        p.init_zeros("w", &[2]).unwrap();
        assert!(p.init_zeros("w", &[2]).is_err());
    }

    #[test]
    fn iteration_is_sorted() {
        let mut p = ParamStore::new(1);
        for n in ["c", "a", "b"] {
            p.init_zeros(n, &[1]).unwrap();
        }
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }
}
