//! Named parameter set addressable by hierarchical string path.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Batch-norm epsilon used throughout the network.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: running = (1 - m) * running + m * batch.
pub const BN_MOMENTUM: f64 = 0.1;

/// Parameters keyed by path, e.g. `backbone.s3.gc1.primary.weight`.
/// Iteration order is always lexicographic, which fixes serialization order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

/// Running statistics are buffers, not trainable parameters.
pub fn is_trainable(name: &str) -> bool {
    !name.ends_with(".running_mean") && !name.ends_with(".running_var")
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn lookup(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count across all entries.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Element count of entries under a path prefix (`prefix.` separated).
    pub fn elements_under(&self, prefix: &str) -> usize {
        let dotted = format!("{prefix}.");
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(&dotted))
            .map(|(_, v)| v.len())
            .sum()
    }
}

/// Deterministic weight initializer (seeded, order-dependent).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-style scaled uniform init for a conv weight of the given dims.
    pub fn conv_weight(&mut self, dims: (usize, usize, usize, usize)) -> Tensor {
        let fan_in = (dims.1 * dims.2 * dims.3) as f64;
        let bound = (2.0 / fan_in).sqrt();
        let mut t = Tensor::zeros(dims);
        for v in t.data_mut() {
            *v = self.rng.random_range(-bound..bound);
        }
        t
    }

    pub fn zeros_channel(&mut self, c: usize) -> Tensor {
        Tensor::full((c, 1, 1, 1), 0.0)
    }

    pub fn ones_channel(&mut self, c: usize) -> Tensor {
        Tensor::full((c, 1, 1, 1), 1.0)
    }
}
