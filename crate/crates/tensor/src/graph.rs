//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every value produced during one forward pass together
//! with a closure that maps the output gradient back onto the inputs. Node ids
//! are assigned in creation order, so walking the tape backwards is a valid
//! topological order.

use std::cell::{Ref, RefCell};

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::{Scalar, Tensor};

pub type NodeId = usize;

pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a [T],
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// Whether each input needs a gradient; a backward closure may return
    /// `None` for the others.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn<T>>,
}

/// Recording of a single forward pass. Confined to one thread.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    bindings: RefCell<Vec<(ParamId, NodeId)>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

/// Handle to a node in a [`Graph`].
pub struct Var<'g, T: Scalar> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: NodeId,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a leaf. Its `requires_grad` flag decides whether a gradient is
    /// collected for it.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: tensor,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Binds a stored parameter into this graph (once; later calls return the
    /// same node). Frozen parameters enter as constants.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&(_, node)) = self.bindings.borrow().iter().find(|(p, _)| *p == id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let p = store.get(id);
        let value = Tensor::new(p.value.shape().to_vec(), p.value.data().to_vec())
            .expect("stored parameter is well formed")
            .with_requires_grad(p.is_trainable());
        let var = self.leaf(value);
        self.bindings.borrow_mut().push((id, var.id));
        var
    }

    pub(crate) fn bindings(&self) -> Ref<'_, Vec<(ParamId, NodeId)>> {
        self.bindings.borrow()
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    pub(crate) fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    pub fn value(&self, var: Var<'_, T>) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Gradient collected by the last [`Graph::backward`], if any.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Vec<T>> {
        self.nodes.borrow()[var.id].value.grad().map(<[T]>::to_vec)
    }

    pub(crate) fn grad_of(&self, id: NodeId) -> Option<Vec<T>> {
        self.nodes.borrow()[id].value.grad().map(<[T]>::to_vec)
    }

    /// Appends an operation result. The backward closure is dropped when no
    /// input requires a gradient.
    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<NodeId>,
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].value.requires_grad());
        nodes.push(Node {
            value: value.with_requires_grad(requires_grad),
            parents,
            backward: requires_grad.then_some(backward),
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from a scalar `loss`, accumulating into the `grad` of
    /// every node that requires one.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut grads: Vec<Option<Vec<T>>> = {
            let nodes = self.nodes.borrow();
            let out = &nodes[loss.id].value;
            if out.numel() != 1 {
                return Err(TensorError::Usage(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    out.shape()
                )));
            }
            if !out.requires_grad() {
                return Err(TensorError::Usage(
                    "loss does not depend on any tensor that requires grad".into(),
                ));
            }
            let mut grads = vec![None; loss.id + 1];
            grads[loss.id] = Some(vec![T::one()]);
            for id in (0..=loss.id).rev() {
                let node = &nodes[id];
                let Some(backward) = &node.backward else {
                    continue;
                };
                let Some(g) = grads[id].take() else {
                    continue;
                };
                let ctx = BackwardCtx {
                    grad: &g,
                    inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                    output: &node.value,
                    needs: node
                        .parents
                        .iter()
                        .map(|&p| nodes[p].value.requires_grad())
                        .collect(),
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !nodes[p].value.requires_grad() {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                        slot @ None => *slot = Some(pg),
                    }
                }
                grads[id] = Some(g);
            }
            grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in grads.iter_mut().enumerate() {
            if let Some(g) = g.take() {
                if nodes[id].value.requires_grad() {
                    nodes[id].value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(*self).shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.value(*self).requires_grad()
    }

    /// Copy of the forward value (without gradient).
    pub fn to_tensor(&self) -> Tensor<T> {
        let v = self.graph.value(*self);
        Tensor::new(v.shape().to_vec(), v.data().to_vec()).expect("node value is well formed")
    }

    pub fn data(&self) -> Vec<T> {
        self.graph.value(*self).data().to_vec()
    }

    pub fn item(&self) -> T {
        self.graph.value(*self).data()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.graph.grad_of(self.id)
    }
}
