//! Named parameter storage with deterministic (sorted) iteration order.

use std::collections::BTreeMap;
use std::collections::HashMap;

use super::{Element, Graph, Tensor, TensorRef};
use crate::error::{Error, Result};

/// Ordered map of name -> tensor. Holds both trainable parameters and, when
/// produced by [`BoundParams::collect_grads`], their gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.map.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.map.get_mut(name)
    }

    /// Sorted by name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// The graph leaves a parameter store was bound to for one forward pass.
pub struct BoundParams {
    ids: HashMap<String, TensorRef>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> TensorRef {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    /// Gradients for every bound parameter, zeros where unreachable.
    pub fn collect_grads<E: Element>(&self, graph: &Graph<E>) -> ParamStore<E> {
        let mut grads = ParamStore::new();
        for (name, &id) in &self.ids {
            let tensor = match graph.grad(id) {
                Some(g) => Tensor::new(graph.shape(id).to_vec(), g.to_vec()).unwrap(),
                None => Tensor::zeros(graph.shape(id).to_vec()),
            };
            grads.insert(name.clone(), tensor).unwrap();
        }
        grads
    }
}

impl<E: Element> Graph<E> {
    /// Register every parameter as a leaf of this graph.
    pub fn bind_params(&mut self, params: &ParamStore<E>) -> BoundParams {
        let mut ids = HashMap::with_capacity(params.len());
        for (name, tensor) in params.iter() {
            ids.insert(name.to_string(), self.input(tensor.clone()));
        }
        BoundParams { ids }
    }
}
