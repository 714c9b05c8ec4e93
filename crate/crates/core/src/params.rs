//! Named parameter storage in a fixed canonical order.

use std::collections::HashMap;

use crate::error::{MegtError, Result};
use crate::numerics::{init_params, Gradients, InitScheme, RngState, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// All trainable tensors of a model, in registration order. Registration
/// order is the canonical order used by checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor under a unique name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    /// Registers a freshly initialized tensor. The rng stream is derived from
    /// the parameter name, so adding parameters elsewhere never shifts it.
    pub fn init(
        &mut self,
        rng: &RngState,
        name: &str,
        rows: usize,
        cols: usize,
        scheme: InitScheme,
    ) -> ParamId {
        let value = init_params(rows, cols, scheme, &mut rng.child(name));
        self.insert(name, value)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Stores the gradients of one backward pass in each parameter's grad
    /// slot. Parameters the loss did not reach get a zero gradient.
    pub fn set_grads(&mut self, grads: &Gradients) {
        for t in &mut self.tensors {
            let n = t.len();
            t.set_grad(vec![0.0; n]).expect("same length");
        }
        for (id, g) in grads.params() {
            if let Some(g) = g {
                self.tensors[id.0].set_grad(g.to_vec()).expect("grad shape");
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Overwrites values from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(MegtError::Contract(
                "parameter layouts differ".into(),
            ));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// True when every value is bitwise identical (gradients ignored).
    pub fn values_bitwise_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
