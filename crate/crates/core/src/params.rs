//! Named parameter storage shared by all trainable modules.
//!
//! A `ParamSet` owns the weight arrays; layers keep `ParamId` handles and
//! materialize tape leaves at forward time. The optimizer mutates the set
//! in place after each backward pass. Iteration order is allocation order,
//! which keeps updates and checkpoints deterministic.

use crate::tensor::Arr;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arr>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: impl Into<String>, value: Arr) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Arr {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Arr {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Byte-stable digest of all parameter payloads, for frozen-weight checks.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            bytes.extend_from_slice(name.as_bytes());
            for x in value.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        crate::hash::sha256_bytes(&bytes)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Arr)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }
}

/// Per-parameter gradients collected by `Tape::backward`.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: BTreeMap<usize, Arr>,
}

impl GradStore {
    pub fn accumulate(&mut self, id: ParamId, grad: Arr) {
        match self.grads.get_mut(&id.0) {
            Some(existing) => *existing += &grad,
            None => {
                self.grads.insert(id.0, grad);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Arr> {
        self.grads.get(&id.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Arr)> {
        self.grads.iter().map(|(&i, g)| (ParamId(i), g))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
