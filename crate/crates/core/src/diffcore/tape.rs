//! Reverse-mode tape over flat buffers.
//!
//! Nodes are appended in topological order; `backward` sweeps them in reverse
//! exactly once. Each sweep runs on transient gradients and then folds the
//! result into persistent accumulators, so repeated backward calls add up.

use std::collections::BTreeMap;

use super::buffer::{Buffer, Scalar};
use crate::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint callback: reads values and the output gradient through the
/// context and accumulates into input gradients.
pub type BackwardFn<S> = Box<dyn Fn(&mut BackwardCtx<'_, S>)>;

pub(crate) struct OpRecord<S: Scalar> {
    pub name: &'static str,
    pub inputs: Vec<NodeId>,
    pub backward: Option<BackwardFn<S>>,
}

/// Named parameters with matching gradient buffers.
#[derive(Debug, Default, Clone)]
pub struct ParamStore<S: Scalar> {
    values: BTreeMap<String, Buffer<S>>,
    grads: BTreeMap<String, Buffer<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { values: BTreeMap::new(), grads: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, value: Buffer<S>) -> Result<()> {
        if self.values.contains_key(name) {
            return Err(Error::Config(format!("parameter {name:?} already registered")));
        }
        self.grads.insert(name.to_string(), Buffer::zeros_like(&value));
        self.values.insert(name.to_string(), value);
        Ok(())
    }

    pub fn value(&self, name: &str) -> Option<&Buffer<S>> {
        self.values.get(name)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Buffer<S>> {
        self.values.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Buffer<S>> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.fill(S::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Buffer<S>)> {
        self.values.iter()
    }

    /// Parameter/gradient pairs in name order, for optimizer updates.
    pub fn pairs_mut(&mut self) -> impl Iterator<Item = (&String, &mut Buffer<S>, &Buffer<S>)> {
        let grads = &self.grads;
        self.values
            .iter_mut()
            .map(move |(name, value)| (name, value, grads.get(name.as_str()).expect("grad slot")))
    }
}

/// Reverse-mode tape.
pub struct Tape<S: Scalar> {
    records: Vec<OpRecord<S>>,
    values: Vec<Buffer<S>>,
    /// Persistent per-node gradient accumulators.
    acc_grads: Vec<Option<Buffer<S>>>,
    store: ParamStore<S>,
    /// One node per parameter per forward pass.
    param_nodes: BTreeMap<String, NodeId>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self::from_store(ParamStore::new())
    }

    /// Fresh tape around an existing parameter store (checkpoint loads,
    /// per-worker evaluation clones).
    pub fn from_store(store: ParamStore<S>) -> Self {
        Tape {
            records: Vec::new(),
            values: Vec::new(),
            acc_grads: Vec::new(),
            store,
            param_nodes: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn node_count(&self) -> usize {
        self.records.len()
    }

    pub fn value(&self, id: NodeId) -> &Buffer<S> {
        &self.values[id.0]
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Buffer<S>> {
        self.acc_grads[id.0].as_ref()
    }

    /// Drops all recorded nodes but keeps parameters and their gradients.
    pub fn clear_nodes(&mut self) {
        self.records.clear();
        self.values.clear();
        self.acc_grads.clear();
        self.param_nodes.clear();
    }

    /// Zeroes node and parameter gradient accumulators.
    pub fn zero_grads(&mut self) {
        for g in &mut self.acc_grads {
            *g = None;
        }
        self.store.zero_grads();
    }

    fn push(&mut self, record: OpRecord<S>, value: Buffer<S>) -> NodeId {
        let id = NodeId(self.records.len());
        self.records.push(record);
        self.values.push(value);
        self.acc_grads.push(None);
        id
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, value: Buffer<S>) -> NodeId {
        self.push(OpRecord { name: "constant", inputs: vec![], backward: None }, value)
    }

    /// Records an input leaf whose gradient is retained (images, probe
    /// points). Same mechanics as `constant`; the name only aids reports.
    pub fn input(&mut self, value: Buffer<S>) -> NodeId {
        self.push(OpRecord { name: "input", inputs: vec![], backward: None }, value)
    }

    /// Node view of a registered parameter; one node per parameter per pass.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let value = self
            .store
            .value(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?
            .clone();
        let id = self.push(OpRecord { name: "param", inputs: vec![], backward: None }, value);
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers a custom differentiable operation.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: Vec<NodeId>,
        value: Buffer<S>,
        backward: BackwardFn<S>,
    ) -> NodeId {
        self.push(OpRecord { name, inputs, backward: Some(backward) }, value)
    }

    /// Reverse sweep from a scalar loss. Gradients of parameters, inputs,
    /// and every intermediate node accumulate additively across calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, shape {:?}", self.values[loss.0].shape()),
            ));
        }
        let n = self.records.len();
        let mut transient: Vec<Option<Buffer<S>>> = (0..n).map(|_| None).collect();
        transient[loss.0] = Some(Buffer::scalar(S::one()));

        for i in (0..n).rev() {
            let Some(out_grad) = transient[i].take() else {
                continue;
            };
            if let Some(backward) = &self.records[i].backward {
                let mut ctx = BackwardCtx {
                    values: &self.values,
                    grads: &mut transient,
                    out_id: i,
                    out_grad: &out_grad,
                };
                backward(&mut ctx);
            }
            transient[i] = Some(out_grad);
        }

        // Flush this pass's parameter gradients into the store, then fold
        // everything into the persistent per-node accumulators. The store
        // keeps accumulating across `clear_nodes` until `zero_grads`.
        for (name, id) in &self.param_nodes {
            if let Some(g) = &transient[id.0] {
                self.store
                    .grads
                    .get_mut(name.as_str())
                    .expect("registered grad slot")
                    .add_assign(g)?;
            }
        }
        for (i, g) in transient.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.acc_grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.records[id.0].name
    }

    pub fn op_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.records[id.0].inputs
    }
}

/// View given to adjoint callbacks during the reverse sweep.
pub struct BackwardCtx<'a, S: Scalar> {
    values: &'a [Buffer<S>],
    grads: &'a mut [Option<Buffer<S>>],
    out_id: usize,
    out_grad: &'a Buffer<S>,
}

impl<'a, S: Scalar> BackwardCtx<'a, S> {
    pub fn val(&self, id: NodeId) -> &Buffer<S> {
        &self.values[id.0]
    }

    pub fn out_val(&self) -> &Buffer<S> {
        &self.values[self.out_id]
    }

    pub fn out_grad(&self) -> &Buffer<S> {
        self.out_grad
    }

    /// Mutable gradient slice for an input node, allocated on first touch.
    pub fn grad_mut(&mut self, id: NodeId) -> &mut [S] {
        let slot = &mut self.grads[id.0];
        slot.get_or_insert_with(|| Buffer::zeros_like(&self.values[id.0]))
            .data_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_nodes_are_cached_per_pass() {
        let mut tape: Tape<f64> = Tape::new();
        tape.store_mut()
            .register("w", Buffer::vector(vec![1.0, 2.0]))
            .unwrap();
        let a = tape.param("w").unwrap();
        let b = tape.param("w").unwrap();
        assert_eq!(a, b);
        tape.clear_nodes();
        let c = tape.param("w").unwrap();
        assert_eq!(c.index(), 0);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape: Tape<f64> = Tape::new();
        let v = tape.constant(Buffer::vector(vec![1.0, 2.0]));
        assert!(tape.backward(v).is_err());
    }

    #[test]
    fn duplicate_param_rejected() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.register("w", Buffer::scalar(1.0)).unwrap();
        assert!(store.register("w", Buffer::scalar(2.0)).is_err());
    }
}
