//! Reductions: full and per-axis sums and means.

use super::{add_to_grad, Tensor};
use crate::error::{Error, Result};
use alloc::boxed::Box;

/// Decompose a shape around `axis` into (outer, axis length, inner) extents.
fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::arg(
            op,
            alloc::format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl Tensor {
    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let total: f64 = self.node().data.iter().sum();
        Tensor::from_op(
            "sum_all",
            alloc::vec![total],
            alloc::vec![1],
            alloc::vec![self.clone()],
            Box::new(|n| {
                let p = &n.parents[0];
                if p.requires_grad() {
                    let g = n.grad_slice()[0];
                    add_to_grad(p, &alloc::vec![g; p.numel()]);
                }
            }),
        )
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Result<Tensor> {
        let count = self.numel();
        if count == 0 {
            return Err(Error::arg("mean_all", "tensor has no elements"));
        }
        let mean: f64 = self.node().data.iter().sum::<f64>() / count as f64;
        Tensor::from_op(
            "mean_all",
            alloc::vec![mean],
            alloc::vec![1],
            alloc::vec![self.clone()],
            Box::new(move |n| {
                let p = &n.parents[0];
                if p.requires_grad() {
                    let g = n.grad_slice()[0] / count as f64;
                    add_to_grad(p, &alloc::vec![g; p.numel()]);
                }
            }),
        )
    }

    /// Sum along one axis. With `keepdim` the axis stays with extent 1,
    /// otherwise it is removed.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis("sum_axis", axis, keepdim, false)
    }

    /// Mean along one axis (see [`Tensor::sum_axis`] for shape rules).
    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis("mean_axis", axis, keepdim, true)
    }

    fn reduce_axis(
        &self,
        op: &'static str,
        axis: usize,
        keepdim: bool,
        mean: bool,
    ) -> Result<Tensor> {
        let shape = self.shape();
        let (outer, len, inner) = split_axis(op, &shape, axis)?;
        if len == 0 {
            return Err(Error::arg(op, alloc::format!("axis {axis} has extent 0")));
        }
        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
        let mut data = alloc::vec![0.0; outer * inner];
        {
            let n = self.node();
            for o in 0..outer {
                for a in 0..len {
                    let base = (o * len + a) * inner;
                    let out_base = o * inner;
                    for i in 0..inner {
                        data[out_base + i] += n.data[base + i];
                    }
                }
            }
        }
        if mean {
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Tensor::from_op(
            op,
            data,
            out_shape,
            alloc::vec![self.clone()],
            Box::new(move |n| {
                let p = &n.parents[0];
                if !p.requires_grad() {
                    return;
                }
                let g = n.grad_slice();
                let mut contrib = alloc::vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        let g_base = o * inner;
                        for i in 0..inner {
                            contrib[base + i] = g[g_base + i] * scale;
                        }
                    }
                }
                add_to_grad(p, &contrib);
            }),
        )
    }
}
