use crate::graph::Graph;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Trainable,
    /// Non-learned state saved with the model (e.g. batch-norm running stats).
    Buffer,
}

/// A named model tensor plus its optimizer state.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub momentum_buffer: Vec<T>,
    pub frozen: bool,
    pub kind: ParamKind,
}

impl<T: Scalar> Parameter<T> {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable && !self.frozen
    }
}

/// Flat, ordered collection of every parameter and buffer of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let numel = value.numel();
        self.params.push(Parameter {
            name,
            value: value.with_requires_grad(kind == ParamKind::Trainable),
            momentum_buffer: vec![T::zero(); numel],
            frozen: false,
            kind,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
        }
    }

    /// Moves gradients collected in `graph` onto the bound, trainable parameters.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>) {
        for &(pid, node) in graph.bindings().iter() {
            let p = &mut self.params[pid.0];
            if !p.is_trainable() {
                continue;
            }
            if let Some(g) = graph.grad_of(node) {
                p.value.accumulate_grad(&g);
            }
        }
    }

    /// Applies running-statistic updates recorded during a training-mode pass.
    pub fn apply_buffer_updates(&mut self, graph: &Graph<T>) {
        for (pid, value) in graph.take_buffer_updates() {
            let p = &mut self.params[pid.0];
            if p.frozen {
                continue;
            }
            assert_eq!(p.value.shape(), value.shape());
            p.value.data_mut().copy_from_slice(value.data());
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.zero_grad());
    }

    /// Number of scalar trainable weights (buffers excluded, frozen included)
    /// among parameters whose name starts with `prefix`.
    pub fn count_weights(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable && p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }
}
