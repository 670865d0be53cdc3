use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named learnable tensors. Names are dotted paths such as
/// `element.head.conv1.weight`; the first segment identifies the owning
/// component (`extractor`, `element`, `defect`, `merged`, `uncertainty`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Adds `grad` into the tensor called `name`, creating it if needed.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor) {
        match self.tensors.get_mut(name) {
            Some(t) => t.add_assign(grad),
            None => {
                self.tensors.insert(name.to_string(), grad.clone());
            }
        }
    }

    /// Hash over the bits of every tensor whose name starts with `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for (name, t) in self.tensors.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            name.hash(&mut hasher);
            t.shape().hash(&mut hasher);
            for v in t.data() {
                v.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    /// Subset of tensors whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Uniform initialization with bound `sqrt(6 / fan_in)` (He/Kaiming uniform).
pub(crate) fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape and length agree")
}
