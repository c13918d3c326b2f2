use std::collections::BTreeMap;

use crate::graph::{Gradients, NodeId, Tape};
use crate::{ComputeError, Tensor};

/// Named parameter tensors, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        if let Some(&i) = self.index.get(name) {
            self.tensors[i] = value;
            return ParamId(i);
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(value);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Elementwise mean of several stores with identical names and shapes.
    pub fn average(stores: &[&ParamStore]) -> Result<ParamStore, ComputeError> {
        let first = stores.first().ok_or(ComputeError::EmptyAverage)?;
        let mut out = (*first).clone();
        for other in &stores[1..] {
            if other.names != first.names {
                return Err(ComputeError::ParamLayout("parameter names differ".into()));
            }
            for (i, t) in other.tensors.iter().enumerate() {
                if t.shape() != first.tensors[i].shape() {
                    return Err(ComputeError::ParamLayout(format!(
                        "{}: {:?} vs {:?}",
                        first.names[i],
                        first.tensors[i].shape(),
                        t.shape()
                    )));
                }
                out.tensors[i].add_assign(t);
            }
        }
        let k = stores.len() as f64;
        for t in &mut out.tensors {
            for v in t.data_mut() {
                *v /= k;
            }
        }
        Ok(out)
    }
}

/// Parameters of a store placed on a tape as gradient-requiring leaves.
pub struct Bound {
    nodes: Vec<NodeId>,
}

impl Bound {
    pub fn new(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Self {
        let nodes = store
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Self { nodes }
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Gradients for every parameter, in store order.
    pub fn collect(&self, grads: &mut Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.nodes
            .iter()
            .zip(&store.tensors)
            .map(|(n, t)| grads.take(*n).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}
