//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so node ids are a topological
//! order and the backward sweep is a single reverse scan.

use std::cell::RefCell;
use std::collections::HashMap;

use super::{Element, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one node: receives the output gradient and a
/// per-parent "needs gradient" mask, returns one gradient per parent.
pub(crate) type Backward<E> = Box<dyn Fn(&[E], &[bool]) -> Vec<Option<Vec<E>>>>;

enum Origin {
    Op,
    Input,
    Param(String),
}

struct Node<E: Element> {
    value: Tensor<E>,
    parents: Vec<usize>,
    backward: Option<Backward<E>>,
    requires_grad: bool,
    origin: Origin,
}

/// Single-writer recording of one forward pass.
pub struct Tape<E: Element = f32> {
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, E: Element = f32> {
    pub(crate) tape: &'t Tape<E>,
    pub(crate) id: usize,
}

impl<E: Element> Clone for Var<'_, E> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<E: Element> Copy for Var<'_, E> {}

impl<E: Element> std::fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Tensor<E>, requires_grad: bool, origin: Origin) -> Var<'_, E> {
        let mut nodes = self.nodes.borrow_mut();
        let mut value = value;
        value.grad = None;
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            origin,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.push_leaf(value, false, Origin::Input)
    }

    /// Records an input leaf; its gradient is collected when `requires_grad` is set.
    pub fn input(&self, value: Tensor<E>) -> Var<'_, E> {
        let rg = value.requires_grad;
        self.push_leaf(value, rg, Origin::Input)
    }

    /// Records a named tensor from the store. Trainable tensors receive
    /// gradients that [`Gradients::accumulate_into`] adds to the store.
    pub fn param(&self, store: &ParamStore<E>, name: &str) -> Result<Var<'_, E>> {
        let t = store.get(name)?;
        let rg = t.requires_grad;
        let origin = if rg {
            Origin::Param(name.to_owned())
        } else {
            Origin::Input
        };
        Ok(self.push_leaf(t.clone(), rg, origin))
    }

    pub(crate) fn push(
        &self,
        value: Tensor<E>,
        parents: &[Var<'_, E>],
        backward: impl Fn(&[E], &[bool]) -> Vec<Option<Vec<E>>> + 'static,
    ) -> Result<Var<'_, E>> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite value produced in tensor of shape {:?}",
                value.shape()
            )));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
            origin: Origin::Op,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub(crate) fn value(&self, id: usize) -> Tensor<E> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar loss.
    ///
    /// Every leaf that requires a gradient gets one; leaves the loss does not
    /// depend on get exact zeros.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<Gradients<E>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::usage("loss was recorded on a different tape"));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![E::one()]);
        let mut out = Gradients {
            by_node: HashMap::new(),
            params: Vec::new(),
        };

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let grad = grads[id].take();
            match (&node.backward, &node.origin) {
                (Some(back), _) => {
                    let Some(g) = grad else { continue };
                    let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                    let parent_grads = back(&g, &mask);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(mask) {
                        let (Some(pg), true) = (pg, need) else { continue };
                        match &mut grads[p] {
                            Some(acc) => acc.iter_mut().zip(pg).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
                (None, origin) => {
                    let g = grad.unwrap_or_else(|| vec![E::zero(); node.value.len()]);
                    if let Origin::Param(name) = origin {
                        out.params.push((name.clone(), id));
                    }
                    out.by_node.insert(id, g);
                }
            }
        }
        Ok(out)
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<E: Element = f32> {
    by_node: HashMap<usize, Vec<E>>,
    params: Vec<(String, usize)>,
}

impl<E: Element> Gradients<E> {
    pub fn wrt(&self, var: Var<'_, E>) -> Option<&[E]> {
        self.by_node.get(&var.id).map(Vec::as_slice)
    }

    /// Adds parameter gradients into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<E>) -> Result<()> {
        for (name, id) in &self.params {
            store.accumulate_grad(name, &self.by_node[id])?;
        }
        Ok(())
    }
}

impl<'t, E: Element> Var<'t, E> {
    pub fn value(&self) -> Tensor<E> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn item(&self) -> Result<E> {
        self.value().item()
    }

    pub fn backward(&self) -> Result<Gradients<E>> {
        self.tape.backward(*self)
    }
}
