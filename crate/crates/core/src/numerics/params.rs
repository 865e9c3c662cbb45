use std::collections::HashMap;

use rand::Rng;

use super::{NumericsError, Tensor};

/// One named tensor in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Named parameters and buffers in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<(), NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, tensor: Tensor) -> Result<(), NumericsError> {
        self.insert(name, tensor, true)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor) -> Result<(), NumericsError> {
        self.insert(name, tensor, false)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entry(name).map(|e| &e.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.get(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<(), NumericsError> {
        let i = *self.index.get(name).ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        let slot = &mut self.entries[i].tensor;
        if slot.shape() != tensor.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "param_set",
                detail: format!("{name}: {:?} vs {:?}", slot.shape(), tensor.shape()),
            });
        }
        *slot = tensor;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    /// Rebuilds a store from entries, e.g. after loading a checkpoint.
    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self, NumericsError> {
        let mut s = Self::new();
        for e in entries {
            s.insert(&e.name, e.tensor, e.trainable)?;
        }
        Ok(s)
    }
}

/// Uniform in `[-bound, bound]` with `bound = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], half_width: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-half_width..=half_width)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}
