//! Graph node storage, reverse-mode traversal, and the finite-check switch.

use super::Tensor;
use crate::error::{Error, Result};
use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, AtomicU8, Ordering};

/// Backward closure: receives the output node (with its gradient filled in)
/// and accumulates contributions into the node's parents via [`add_to_grad`].
pub(crate) type BackFn = Box<dyn Fn(&Node)>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// 0 = unset (fall back to debug_assertions), 1 = off, 2 = on.
static FINITE_CHECKS: AtomicU8 = AtomicU8::new(0);

/// Enable or disable the per-operation NaN/infinity scan.
pub fn set_finite_checks(on: bool) {
    FINITE_CHECKS.store(if on { 2 } else { 1 }, Ordering::Relaxed);
}

/// Whether operations currently scan their outputs for non-finite values.
/// Defaults to on in debug builds and off in release builds.
pub fn finite_checks_enabled() -> bool {
    match FINITE_CHECKS.load(Ordering::Relaxed) {
        1 => false,
        2 => true,
        _ => cfg!(debug_assertions),
    }
}

pub(crate) struct Node {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub parents: Vec<Tensor>,
    pub backward: Option<BackFn>,
}

impl Node {
    pub fn new(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Node {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: None,
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }
    }

    /// The output gradient during the backward pass. Only called from
    /// backward closures, where the traversal guarantees it is set.
    pub fn grad_slice(&self) -> &[f64] {
        self.grad.as_ref().expect("backward closure run without gradient")
    }
}

/// Accumulate a gradient contribution into `t` (no-op if the tensor does not
/// require gradients, e.g. frozen parameters or detached values).
pub(crate) fn add_to_grad(t: &Tensor, contrib: &[f64]) {
    let mut n = t.inner.borrow_mut();
    if !n.requires_grad {
        return;
    }
    debug_assert_eq!(contrib.len(), n.data.len());
    match &mut n.grad {
        Some(g) => {
            for (gi, ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        None => n.grad = Some(contrib.to_vec()),
    }
}

impl Tensor {
    /// Construct an operation result. Decides gradient tracking from the
    /// parents, prunes the graph when nothing requires gradients, and applies
    /// the finite check to the fresh values.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: BackFn,
    ) -> Result<Tensor> {
        if finite_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let mut node = Node::new(data, shape, requires_grad);
        if requires_grad {
            node.parents = parents;
            node.backward = Some(backward);
        }
        Ok(Tensor {
            inner: alloc::rc::Rc::new(core::cell::RefCell::new(node)),
        })
    }

    /// Reverse-mode gradient accumulation from a scalar loss.
    ///
    /// Walks the recorded graph once in reverse topological order; gradients
    /// of tensors used several times accumulate. Calling `backward` twice
    /// without clearing gradients adds the new gradients onto the old ones.
    pub fn backward(&self) -> Result<()> {
        let numel = self.numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        {
            let mut n = self.inner.borrow_mut();
            if !n.requires_grad {
                // Loss does not depend on anything trainable; nothing to do.
                return Ok(());
            }
            match &mut n.grad {
                Some(g) => g[0] += 1.0,
                None => n.grad = Some(alloc::vec![1.0]),
            }
        }
        for t in topo_order(self).iter().rev() {
            let n = t.inner.borrow();
            if n.grad.is_some() {
                if let Some(back) = &n.backward {
                    back(&n);
                }
            }
        }
        Ok(())
    }
}

/// Iterative post-order DFS over gradient-requiring nodes: every node appears
/// after all of its parents, so iterating the result in reverse visits each
/// node before the nodes it depends on.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: BTreeSet<u64> = BTreeSet::new();
    let mut stack: Vec<(Tensor, usize)> = alloc::vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((t, child)) = stack.pop() {
        let next = {
            let n = t.inner.borrow();
            n.parents.get(child).cloned()
        };
        match next {
            Some(p) => {
                stack.push((t, child + 1));
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            }
            None => order.push(t),
        }
    }
    order
}
