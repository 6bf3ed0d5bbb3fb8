//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] wraps a tensor value together with the operation that produced
//! it. Parameters are leaf `Var`s created with [`Var::parameter`]; cloning a
//! `Var` shares the same storage, which is how tied weights are expressed.
//! Node ids grow monotonically, so sorting reachable nodes by descending id is
//! a valid reverse topological order.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Run `f` without recording a graph. Values are computed as usual.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// What a backward closure sees: the upstream gradient, the values of the
/// op's inputs, its own output, and which inputs need a gradient.
pub(crate) struct Ctx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Ctx<'_, T>) -> Result<Vec<Option<Tensor<T>>>> + Send + Sync>;

struct Node<T: Scalar> {
    id: u64,
    op: &'static str,
    value: RwLock<Tensor<T>>,
    grad: Mutex<Option<Tensor<T>>>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Var<T: Scalar = f32>(Arc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Arc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.op)
            .field("value", &*self.0.value.read())
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Arc::new(Node {
            id: fresh_id(),
            op: "leaf",
            value: RwLock::new(value),
            grad: Mutex::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    /// A trainable leaf; `backward` accumulates into its gradient.
    pub fn parameter(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// Result of an op. Fails if the value is not finite.
    pub(crate) fn from_op(
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Self> {
        value.ensure_finite(op)?;
        let record = grad_enabled() && parents.iter().any(Var::requires_grad);
        let (parents, backward) = if record {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Ok(Var(Arc::new(Node {
            id: fresh_id(),
            op,
            value: RwLock::new(value),
            grad: Mutex::new(None),
            requires_grad: record,
            parents,
            backward,
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn op(&self) -> &'static str {
        self.0.op
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor<T>> {
        self.0.value.read()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.0.value.read().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.read().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.0.value.read().numel()
    }

    /// Replace the stored value, keeping the shape. Intended for parameter updates.
    pub fn set_value(&self, value: Tensor<T>) -> Result<()> {
        let mut slot = self.0.value.write();
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_value", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Mutate the stored value in place.
    pub fn update(&self, f: impl FnOnce(&mut Tensor<T>)) {
        f(&mut self.0.value.write());
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.to_tensor())
    }

    pub fn same_storage(&self, other: &Var<T>) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Backpropagate from a scalar. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        grads.insert(self.id(), Tensor::full(self.shape(), T::one()));
        for node in order {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.backward {
                None => {
                    let mut slot = node.0.grad.lock();
                    match slot.as_mut() {
                        Some(acc) => acc.add_assign(&g)?,
                        None => *slot = Some(g),
                    }
                }
                Some(bw) => {
                    let guards: Vec<_> = node.0.parents.iter().map(|p| p.value()).collect();
                    let inputs: Vec<&Tensor<T>> = guards.iter().map(|g| &**g).collect();
                    let needs: Vec<bool> = node.0.parents.iter().map(Var::requires_grad).collect();
                    let out = node.value();
                    let pgrads = bw(&Ctx {
                        grad: &g,
                        inputs: &inputs,
                        output: &out,
                        needs: &needs,
                    })?;
                    drop(out);
                    drop(guards);
                    for (p, pg) in node.0.parents.iter().zip(pgrads) {
                        let (Some(pg), true) = (pg, p.requires_grad()) else {
                            continue;
                        };
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.add_assign(&pg)?,
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
