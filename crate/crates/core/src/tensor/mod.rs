//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap clonable handle onto a node in a dynamically built
//! computation graph. Operations eagerly compute their values and record a
//! backward closure; calling [`Tensor::backward`] on a scalar walks the graph
//! in reverse topological order and accumulates gradients into every
//! reachable tensor whose `requires_grad` flag is set.
//!
//! Conventions:
//! * layout is dense row-major; image batches are `[batch, ch, height, width]`
//! * gradients accumulate across multiple uses of the same tensor
//! * operations on tensors that do not require gradients record nothing, so
//!   inference loops do not grow a graph
//! * when finite checks are enabled (default in debug builds) every operation
//!   scans its output and fails with [`Error::NonFinite`] on NaN/infinity

mod autograd;
mod broadcast;
mod conv;
mod elementwise;
mod gemm;
mod norm;
mod reduce;
mod shape_ops;

pub use autograd::{finite_checks_enabled, set_finite_checks};

pub(crate) use autograd::{add_to_grad, Node};
pub(crate) use gemm::{gemm_nn, gemm_nt, gemm_tn};

use crate::error::{Error, Result};
use alloc::rc::Rc;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Handle onto a node of the autodiff graph. Cloning is cheap and aliases the
/// same underlying storage; tensors are single-threaded (`!Send`).
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<Node>>,
}

impl Tensor {
    // ---------------------------------------------------------------- leaves

    /// Leaf tensor from explicit data. Fails if `data.len()` does not match
    /// the product of `shape`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "new",
                alloc::format!("data length {} != shape {:?} product {}", data.len(), shape, numel),
            ));
        }
        Ok(Tensor::leaf(data, shape.to_vec(), false))
    }

    /// Leaf with `requires_grad = true`; used for trainable parameters.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    /// All-zero leaf.
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(alloc::vec![0.0; shape.iter().product()], shape.to_vec(), false)
    }

    /// Leaf filled with a constant.
    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(alloc::vec![value; shape.iter().product()], shape.to_vec(), false)
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(&[1], value)
    }

    /// Leaf with entries drawn independently from a normal distribution.
    pub fn randn<R: Rng>(shape: &[usize], mean: f64, std_dev: f64, rng: &mut R) -> Result<Tensor> {
        if !(std_dev >= 0.0) {
            return Err(Error::arg(
                "randn",
                alloc::format!("standard deviation must be non-negative, got {std_dev}"),
            ));
        }
        let normal = Normal::new(mean, std_dev)
            .map_err(|e| Error::arg("randn", e.to_string()))?;
        let data: Vec<f64> = (0..shape.iter().product())
            .map(|_| normal.sample(rng))
            .collect();
        Ok(Tensor::leaf(data, shape.to_vec(), false))
    }

    pub(crate) fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Node::new(data, shape, requires_grad))),
        }
    }

    // ------------------------------------------------------------- accessors

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Copy of the tensor's values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        let n = self.inner.borrow();
        if n.data.len() != 1 {
            return Err(Error::shape(
                "item",
                alloc::format!("expected 1 element, tensor has shape {:?}", n.shape),
            ));
        }
        Ok(n.data[0])
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Toggle gradient tracking. Turning it off also drops any stored
    /// gradient; this is how parameter groups are frozen between sub-steps.
    pub fn set_requires_grad(&self, on: bool) {
        let mut n = self.inner.borrow_mut();
        n.requires_grad = on;
        if !on {
            n.grad = None;
        }
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// New leaf with copied values and no graph history. Gradients never flow
    /// through a detached tensor.
    pub fn detach(&self) -> Tensor {
        let n = self.inner.borrow();
        Tensor::leaf(n.data.clone(), n.shape.clone(), false)
    }

    /// Overwrite the values in place (shape must match). Used when restoring
    /// parameters from a checkpoint.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        let mut n = self.inner.borrow_mut();
        if values.len() != n.data.len() {
            return Err(Error::shape(
                "set_values",
                alloc::format!("got {} values for shape {:?}", values.len(), n.shape),
            ));
        }
        n.data.copy_from_slice(values);
        Ok(())
    }

    /// Add `delta` to one element in place, bypassing the graph. Used by the
    /// finite-difference gradient checker.
    pub fn nudge(&self, index: usize, delta: f64) {
        self.inner.borrow_mut().data[index] += delta;
    }

    pub(crate) fn node(&self) -> Ref<'_, Node> {
        self.inner.borrow()
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.borrow().id
    }
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let n = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &n.shape)
            .field("requires_grad", &n.requires_grad)
            .field("data", &n.data)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(alloc::vec![1.0, 2.0], &[3]).is_err());
        assert!(Tensor::new(alloc::vec![1.0, 2.0], &[2, 1]).is_ok());
    }

    #[test]
    fn item_rejects_non_scalar() {
        let t = Tensor::zeros(&[2]);
        assert!(t.item().is_err());
        assert_eq!(Tensor::scalar(3.5).item().unwrap(), 3.5);
    }

    #[test]
    fn detach_copies_and_drops_grad_tracking() {
        let p = Tensor::param(alloc::vec![1.0, 2.0], &[2]).unwrap();
        let d = p.detach();
        assert!(!d.requires_grad());
        assert_eq!(d.values(), alloc::vec![1.0, 2.0]);
        d.nudge(0, 5.0);
        assert_eq!(p.values()[0], 1.0, "detach must copy, not alias");
    }

    #[test]
    fn freezing_drops_stored_grad() {
        let p = Tensor::param(alloc::vec![1.0], &[1]).unwrap();
        let loss = p.mul(&p).unwrap();
        loss.backward().unwrap();
        assert!(p.grad().is_some());
        p.set_requires_grad(false);
        assert!(p.grad().is_none());
    }

    #[test]
    fn randn_rejects_negative_std() {
        let mut rng = crate::rng::stream_from(0, "test");
        assert!(Tensor::randn(&[4], 0.0, -1.0, &mut rng).is_err());
    }
}
