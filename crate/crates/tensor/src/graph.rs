//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every [`Var`] remembers its parents and a backward closure. Node ids are
//! handed out monotonically, so a child always has a larger id than any of
//! its parents and descending id order is a valid reverse topological order.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Maps the upstream gradient (and the node's own output) to per-parent
/// gradients, in parent order. `None` means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[Var<T>]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A tensor participating in the autodiff graph. Cloning is cheap.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?}, grad={})", self.0.id, self.0.value, self.0.requires_grad)
    }
}

impl<T: Scalar> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, parents: Vec<Var<T>>, backward: Option<BackwardFn<T>>) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, parents, backward }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    /// A differentiable input (parameter or probe).
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::constant(Tensor::scalar(value))
    }

    /// Records an operation result. The closure is only kept when some parent
    /// needs a gradient.
    pub(crate) fn from_op(
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&Tensor<T>, &Tensor<T>, &[Var<T>]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            Self::make(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<T> {
        if self.requires_grad() {
            Var::constant(self.0.value.clone())
        } else {
            self.clone()
        }
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    /// Gradients of this (scalar) var with respect to every leaf reachable from it.
    pub fn backward(&self) -> Gradients<T> {
        let seed = Tensor::ones(self.shape().to_vec());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed gradient shape mismatch");
        let mut grads = Gradients { map: HashMap::new() };
        if !self.requires_grad() {
            return grads;
        }
        // Collect the reachable differentiable subgraph.
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            nodes.push(v);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut pending: HashMap<usize, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in nodes {
            let Some(g) = pending.remove(&node.id()) else { continue };
            match &node.0.backward {
                None => {
                    grads.map.insert(node.id(), g);
                }
                Some(f) => {
                    let parent_grads = f(&g, &node.0.value, &node.0.parents);
                    debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                    for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), p.shape(), "gradient shape mismatch");
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Leaf gradients produced by [`Var::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    map: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.map.get(&var.id())
    }

    /// Gradient for `var`, or zeros when it did not influence the output.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        self.map.remove(&var.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
