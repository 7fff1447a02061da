use std::collections::BTreeMap;

use super::Tensor;

/// Whether a parameter tensor holds interleaved complex values (trailing
/// axis of length 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    Complex,
}

/// Learnable tensors addressed by stable dotted names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: BTreeMap<String, Tensor>,
    kinds: BTreeMap<String, ParamKind>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) {
        let name = name.into();
        self.kinds.insert(name.clone(), kind);
        self.values.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn kind(&self, name: &str) -> Option<ParamKind> {
        self.kinds.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.values.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.values.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of real scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.values().all(Tensor::is_finite)
    }
}
