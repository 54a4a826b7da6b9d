//! Reverse-mode tape.
//!
//! Every op appends a node holding its output value, the ids of its inputs and
//! (when any input needs a gradient) a backward closure mapping the output
//! gradient to one gradient per input. Ids grow monotonically, so walking the
//! node list backwards is a valid reverse topological order.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub(crate) type Grads<T> = Vec<Option<Tensor<T>>>;
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Result<Grads<T>>>;

struct Node<T: Float> {
    op: &'static str,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    is_leaf: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value,
            requires_grad,
            is_leaf: true,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Arc::new(value), true)
    }

    pub fn param_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Arc::new(value), false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_leaf(Arc::new(value), requires_grad)
    }

    /// Records an op output. `backward` is kept only when some parent needs a
    /// gradient; it must return one entry per parent, in order.
    pub(crate) fn push<F>(&self, op: &'static str, value: Tensor<T>, parents: &[Var<'_, T>], backward: F) -> Result<Var<'_, T>>
    where
        F: FnOnce(&Tensor<T>) -> Result<Grads<T>> + 'static,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        if self.consumed.get() {
            return Err(Error::Autodiff(format!("{op}: tape already consumed by backward")));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
            is_leaf: false,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward) as BackwardFn<T>)
            } else {
                None
            },
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Runs reverse accumulation from a scalar `loss`. A tape supports one
    /// backward pass.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        self.backward_with_seed(loss, T::one())
    }

    /// Like [`Tape::backward`] with d(objective)/d(loss) = `seed`.
    pub fn backward_with_seed(&self, loss: Var<'_, T>, seed: T) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Autodiff("loss belongs to a different tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Autodiff("backward already ran on this tape; build a new tape".into()));
        }
        let n = self.len();
        if n == 0 {
            return Err(Error::Autodiff("empty tape".into()));
        }
        let loss_shape = self.value_of(loss.id).shape().to_vec();
        if self.value_of(loss.id).len() != 1 {
            return Err(Error::Autodiff(format!("backward needs a scalar loss, got shape {loss_shape:?}")));
        }
        let mut grads: Grads<T> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(&loss_shape, seed));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (backward, parents, op) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                if node.is_leaf {
                    grads[id] = Some(g);
                    continue;
                }
                (node.backward.take(), node.parents.clone(), node.op)
            };
            let Some(backward) = backward else { continue };
            let parent_grads = backward(&g)?;
            debug_assert_eq!(parent_grads.len(), parents.len(), "{op}: backward arity");
            for (pid, pg) in parents.into_iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.requires_grad_of(pid) {
                    continue;
                }
                if !pg.all_finite() {
                    return Err(Error::NonFinite { op });
                }
                match &mut grads[pid] {
                    Some(acc) => {
                        if acc.shape() != pg.shape() {
                            return Err(Error::shape(op, acc.shape(), pg.shape()));
                        }
                        acc.add_assign(&pg);
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let nodes = self.nodes.borrow();
        let mut leaf_grads: Grads<T> = (0..n).map(|_| None).collect();
        for (id, node) in nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                leaf_grads[id] = Some(grads[id].take().unwrap_or_else(|| Tensor::zeros(node.value.shape())));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of every leaf created with `requires_grad`.
pub struct Gradients<T: Float> {
    grads: Grads<T>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn item(&self) -> T {
        self.value().item()
    }
}
