use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub(crate) adam_m: Vec<f64>,
    pub(crate) adam_v: Vec<f64>,
    pub(crate) adam_t: u64,
}

/// Ordered, uniquely named set of learnable tensors plus their optimizer
/// state. Iteration follows insertion order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        let n = value.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: None,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            adam_t: 0,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Uniform Glorot initialization for a `fan_out × fan_in` matrix.
    pub fn glorot(&mut self, name: &str, fan_out: usize, fan_in: usize) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_out * fan_in)
            .map(|_| self.rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::matrix(fan_out, fan_in, data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Contract(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|id| &self.entries[id.0])
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Add graph gradients into the stored gradient slots.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.0 {
            let e = &mut self.entries[id.0];
            match &mut e.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => e.grad = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Hash of every name, shape and value bit; changes whenever any
    /// parameter does.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            e.name.hash(&mut h);
            e.value.shape().hash(&mut h);
            for x in e.value.data() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParamStore::new(1);
        s.zeros("b", &[3]).unwrap();
        s.glorot("a", 2, 3).unwrap();
        assert!(s.zeros("a", &[1]).is_err());
        let names: Vec<_> = s.iter().map(|(_, e)| e.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn initialization_is_seeded() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            s.glorot("w", 4, 4).unwrap();
            s.normal("e", &[3, 4], 0.1).unwrap();
            s.fingerprint()
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn glorot_stays_within_limit() {
        let mut s = ParamStore::new(9);
        let id = s.glorot("w", 10, 30).unwrap();
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(s.value(id).data().iter().all(|x| x.abs() <= limit));
    }
}
