//! Named parameter storage shared by every model variant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub init: InitKind,
    /// Frozen parameters still receive gradients but are skipped by the optimizer.
    pub trainable: bool,
}

/// Insertion-ordered set of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        self.insert_with(name, value, InitKind::Zero)
    }

    /// Registers a zero tensor of `shape` tagged with its initialization scheme.
    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, init: InitKind) -> Result<ParamId> {
        self.insert_with(name, Tensor::zeros(shape), init)
    }

    pub fn insert_with(&mut self, name: impl Into<String>, value: Tensor, init: InitKind) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            init,
            trainable: true,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    pub fn clear_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.clear_grad());
    }

    /// Global L2 norm over every populated gradient slot.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// How a parameter is initialized before training.
#[derive(Clone, Debug, PartialEq)]
pub enum InitKind {
    /// Row blocks of `block` rows; columns split into the listed segment widths.
    /// Every block is filled with an independent (semi-)orthogonal matrix.
    Orthogonal { block: usize, segments: Vec<usize> },
    Uniform(f64),
    Zero,
    /// Rows copied from pretrained vectors where available, uniform otherwise.
    Embedding(f64),
}
