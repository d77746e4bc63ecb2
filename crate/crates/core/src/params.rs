//! Named parameter storage and the per-pass binding of parameters into a graph.

use std::collections::HashMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which sub-network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Temporal conv stack and wave head producing the motion code.
    MotionEncoder,
    /// Content mapping network.
    Mapping,
    /// Motion network.
    MotionNet,
    /// Per-layer affine maps producing content styles.
    Affine,
    /// Hypernetwork trunk and per-layer heads producing motion styles.
    Hyper,
    /// Synthesis filter banks and their biases.
    Filters,
    /// Learned constant input.
    Constant,
    ToRgb,
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 9] = [
        Group::MotionEncoder,
        Group::Mapping,
        Group::MotionNet,
        Group::Affine,
        Group::Hyper,
        Group::Filters,
        Group::Constant,
        Group::ToRgb,
        Group::Discriminator,
    ];

    pub fn is_generator(self) -> bool {
        self != Group::Discriminator
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Invalid(format!("no parameter named {name}")))?;
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_param", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn numel(&self, pred: impl Fn(Group) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|e| pred(e.group))
            .map(|e| e.value.len())
            .sum()
    }
}

/// One forward/backward pass: a fresh graph plus lazily bound parameters.
pub struct Session<'a, T: Scalar> {
    pub graph: Graph<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: Box<dyn Fn(Group) -> bool + 'a>,
}

impl<'a, T: Scalar> Session<'a, T> {
    /// Parameters of groups accepted by `trainable` become differentiable leaves.
    pub fn new(store: &'a ParamStore<T>, trainable: impl Fn(Group) -> bool + 'a) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            trainable: Box::new(trainable),
        }
    }

    pub fn frozen(store: &'a ParamStore<T>) -> Self {
        Self::new(store, |_| false)
    }

    pub fn with_graph(mut self, graph: Graph<T>) -> Self {
        self.graph = graph;
        self
    }

    /// Runs `f` in a frozen session that borrows `graph`, handing it back afterwards.
    pub fn scoped<R>(
        store: &'a ParamStore<T>,
        graph: &mut Graph<T>,
        f: impl FnOnce(&mut Session<'a, T>) -> Result<R>,
    ) -> Result<R> {
        let mut s = Session::frozen(store).with_graph(std::mem::take(graph));
        let out = f(&mut s);
        *graph = std::mem::take(&mut s.graph);
        out
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = &self.store.entries[id.0];
        let v = if (self.trainable)(e.group) {
            self.graph.leaf(e.value.clone())
        } else {
            self.graph.constant(e.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Substitutes an existing graph value for a parameter (gradient checks).
    pub fn bind(&mut self, id: ParamId, v: Var) -> Result<()> {
        let expect = self.store.value(id).shape();
        if self.graph.shape(v) != expect {
            return Err(Error::shape("bind", expect, self.graph.shape(v)));
        }
        self.bound[id.0] = Some(v);
        Ok(())
    }

    /// Parameters touched so far that are differentiable in this pass.
    pub fn trainable_bindings(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .filter(|(_, v)| self.graph.requires_grad(*v))
            .collect()
    }

    /// Gradients of `loss` for every trainable parameter; untouched ones get zeros.
    pub fn param_grads(&mut self, loss: Var) -> Result<Vec<(ParamId, Tensor<T>)>> {
        let bindings = self.trainable_bindings();
        let vars: Vec<Var> = bindings.iter().map(|b| b.1).collect();
        let gs = self.graph.grad(loss, &vars)?;
        Ok(bindings
            .into_iter()
            .zip(gs)
            .map(|((id, _), g)| (id, self.graph.value(g).clone()))
            .collect())
    }
}
