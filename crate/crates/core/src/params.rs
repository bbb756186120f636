//! Named parameter tensors and their binding onto a graph.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered registry of named weights. Insertion order is the checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(config_err!("duplicate parameter name {name}"));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.lookup.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.lookup.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams {
            vars,
            lookup: self.lookup.clone(),
        })
    }

    /// Copy the parameter-tensor gradients out of a backward pass, in store order.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        bound
            .vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }

    pub fn insert_normal<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<()> {
        let normal = Normal::new(0.0, std).map_err(|e| config_err!("init std {std}: {e}"))?;
        let t = Tensor::from_fn(shape, |_| T::of(normal.sample(rng)));
        self.insert(name, t)
    }

    pub fn insert_filled(&mut self, name: &str, shape: &[usize], v: f64) -> Result<()> {
        self.insert(name, Tensor::filled(shape, T::of(v)))
    }

    /// Replace every tensor, checking that names and shapes line up.
    pub fn load_from(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        if entries.len() != self.len() {
            return Err(shape_err!(
                "expected {} tensors, found {}",
                self.len(),
                entries.len()
            ));
        }
        for (name, t) in entries {
            let slot = self
                .get_mut(&name)
                .ok_or_else(|| shape_err!("unknown tensor {name}"))?;
            if slot.shape() != t.shape() {
                return Err(shape_err!(
                    "tensor {name}: shape {:?} vs expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            *slot = t;
        }
        Ok(())
    }
}

/// Graph handles of a [`ParamStore`] bound with [`ParamStore::bind`].
pub struct BoundParams {
    vars: Vec<Var>,
    lookup: HashMap<String, usize>,
}

impl BoundParams {
    /// Pair parameter names with already-recorded leaves.
    pub fn from_parts(names: &[String], vars: &[Var]) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            vars: vars.to_vec(),
            lookup,
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.lookup
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| config_err!("missing parameter {name}"))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
