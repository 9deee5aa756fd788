use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        self.entries.insert(name.to_string(), Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.tensor).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<T>> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn num_elements_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, p)| p.tensor.numel()).sum()
    }

    /// Mark every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (k, p) in self.entries.iter_mut() {
            if k.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.entries.values_mut() {
            p.trainable = trainable;
        }
    }

    /// Entries under `prefix`, as a new set.
    pub fn subset(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Move all entries of `other` in; names must not collide.
    pub fn merge(&mut self, other: ParamSet<T>) -> Result<()> {
        for k in other.entries.keys() {
            if self.entries.contains_key(k) {
                return Err(Error::DuplicateParam(k.clone()));
            }
        }
        self.entries.extend(other.entries);
        Ok(())
    }

    /// Insert or overwrite all entries of `other`.
    pub fn replace_from(&mut self, other: ParamSet<T>) {
        self.entries.extend(other.entries);
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), trainable: p.trainable }))
                .collect(),
        }
    }
}

/// Parameter name to graph handle, produced by [`Graph::bind`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Extend with an extra named handle (e.g. an input to be differentiated).
    pub fn insert(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }
}

impl<'a, T: Real> Graph<'a, T> {
    /// Borrow every entry of `params` as a leaf. Frozen entries do not
    /// require gradients, so nothing upstream of them is differentiated.
    pub fn bind(&mut self, params: &'a ParamSet<T>) -> Bindings {
        let mut vars = BTreeMap::new();
        for (name, p) in params.iter() {
            vars.insert(name.to_string(), self.borrowed(&p.tensor, p.trainable));
        }
        Bindings { vars }
    }

    /// Borrow every entry as a constant, for inference.
    pub fn bind_frozen(&mut self, params: &'a ParamSet<T>) -> Bindings {
        let mut vars = BTreeMap::new();
        for (name, p) in params.iter() {
            vars.insert(name.to_string(), self.borrowed(&p.tensor, false));
        }
        Bindings { vars }
    }
}

/// `d(loss)/d(param)` for every trainable entry of `params`.
///
/// Frozen entries are absent from the result; trainable entries the loss
/// does not depend on get zeros.
pub fn grad<T: Real>(
    graph: &Graph<'_, T>,
    loss: Var,
    params: &ParamSet<T>,
    bindings: &Bindings,
) -> Result<BTreeMap<String, Tensor<T>>> {
    let mut grads: Gradients<T> = graph.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let var = bindings.get(name)?;
        let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(p.tensor.shape()));
        out.insert(name.to_string(), g);
    }
    Ok(out)
}
