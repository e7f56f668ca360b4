//! Shape manipulation: reshape, broadcast, concatenation, slicing, and the
//! neighbor-gather used by the peer recombination module.

use super::broadcast::{index_map, reduce_to_shape};
use super::{add_to_grad, Tensor};
use crate::error::{Error, Result};
use alloc::boxed::Box;
use alloc::vec::Vec;

impl Tensor {
    /// Reinterpret the flat data under a new shape with the same element
    /// count. Gradients pass through unchanged.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let numel = self.numel();
        let new_numel: usize = new_shape.iter().product();
        if numel != new_numel {
            return Err(Error::shape(
                "reshape",
                alloc::format!("cannot reshape {:?} ({numel} elements) to {new_shape:?}", self.shape()),
            ));
        }
        Tensor::from_op(
            "reshape",
            self.values(),
            new_shape.to_vec(),
            alloc::vec![self.clone()],
            Box::new(|n| {
                let p = &n.parents[0];
                if p.requires_grad() {
                    add_to_grad(p, n.grad_slice());
                }
            }),
        )
    }

    /// Materialize this tensor at a broadcast-compatible target shape. The
    /// backward pass sums gradients over the repeated dimensions.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let check = super::broadcast::broadcast_shape("broadcast_to", &shape, target)?;
        if check != target {
            return Err(Error::shape(
                "broadcast_to",
                alloc::format!("{shape:?} does not broadcast to {target:?}"),
            ));
        }
        let data = {
            let n = self.node();
            index_map(target, &n.shape).iter().map(|&i| n.data[i]).collect()
        };
        Tensor::from_op(
            "broadcast_to",
            data,
            target.to_vec(),
            alloc::vec![self.clone()],
            Box::new(|n| {
                let p = &n.parents[0];
                if p.requires_grad() {
                    add_to_grad(p, &reduce_to_shape(n.grad_slice(), &n.shape, &p.shape()));
                }
            }),
        )
    }

    /// Concatenate tensors along `axis`. All other dimensions must match.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat", "no tensors given"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::arg(
                "concat",
                alloc::format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    alloc::format!("shape {s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();

        let mut data = alloc::vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let n = p.node();
            let len = n.shape[axis];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * axis_total + offset) * inner;
                data[dst..dst + len * inner].copy_from_slice(&n.data[src..src + len * inner]);
            }
            offset += len;
            lens.push(len);
        }
        let parents: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        Tensor::from_op(
            "concat",
            data,
            out_shape,
            parents,
            Box::new(move |n| {
                let g = n.grad_slice();
                let mut offset = 0usize;
                for (p, &len) in n.parents.iter().zip(&lens) {
                    if p.requires_grad() {
                        let mut contrib = alloc::vec![0.0; outer * len * inner];
                        for o in 0..outer {
                            let src = (o * axis_total + offset) * inner;
                            let dst = o * len * inner;
                            contrib[dst..dst + len * inner]
                                .copy_from_slice(&g[src..src + len * inner]);
                        }
                        add_to_grad(p, &contrib);
                    }
                    offset += len;
                }
            }),
        )
    }

    /// Contiguous sub-range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::arg(
                "slice",
                alloc::format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        if start >= end || end > shape[axis] {
            return Err(Error::arg(
                "slice",
                alloc::format!(
                    "range {start}..{end} invalid for axis {axis} of extent {}",
                    shape[axis]
                ),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let len = end - start;
        let mut data = alloc::vec![0.0; outer * len * inner];
        {
            let n = self.node();
            for o in 0..outer {
                let src = (o * full + start) * inner;
                let dst = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&n.data[src..src + len * inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Tensor::from_op(
            "slice",
            data,
            out_shape,
            alloc::vec![self.clone()],
            Box::new(move |n| {
                let p = &n.parents[0];
                if !p.requires_grad() {
                    return;
                }
                let g = n.grad_slice();
                let mut contrib = alloc::vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    contrib[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                add_to_grad(p, &contrib);
            }),
        )
    }

    /// Gather per-site neighbor columns from a feature map.
    ///
    /// `self` is `[B, C, ...]` whose trailing dimensions flatten to `Q`
    /// candidate sites. `indices` holds `B * sites * k` flat site indices
    /// (each `< Q`), laid out `[B, sites, k]`. The result is
    /// `[B, C, sites, k]` with `out[b, c, p, j] = self[b, c, indices[b, p, j]]`.
    /// The backward pass scatter-adds gradients back onto the gathered sites.
    pub fn gather_sites(&self, indices: &[u32], sites: usize, k: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() < 3 {
            return Err(Error::shape(
                "gather_sites",
                alloc::format!("need at least [batch, channel, sites], got {shape:?}"),
            ));
        }
        let (b, c) = (shape[0], shape[1]);
        let q: usize = shape[2..].iter().product();
        if indices.len() != b * sites * k {
            return Err(Error::shape(
                "gather_sites",
                alloc::format!(
                    "got {} indices, expected batch {b} * sites {sites} * k {k} = {}",
                    indices.len(),
                    b * sites * k
                ),
            ));
        }
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= q) {
            return Err(Error::arg(
                "gather_sites",
                alloc::format!("index {bad} out of range for {q} sites"),
            ));
        }
        let mut data = alloc::vec![0.0; b * c * sites * k];
        {
            let n = self.node();
            for bi in 0..b {
                for ci in 0..c {
                    let src = (bi * c + ci) * q;
                    let dst = (bi * c + ci) * sites * k;
                    let idx = &indices[bi * sites * k..(bi + 1) * sites * k];
                    for (j, &site) in idx.iter().enumerate() {
                        data[dst + j] = n.data[src + site as usize];
                    }
                }
            }
        }
        let indices: Vec<u32> = indices.to_vec();
        Tensor::from_op(
            "gather_sites",
            data,
            alloc::vec![b, c, sites, k],
            alloc::vec![self.clone()],
            Box::new(move |n| {
                let p = &n.parents[0];
                if !p.requires_grad() {
                    return;
                }
                let g = n.grad_slice();
                let mut contrib = alloc::vec![0.0; b * c * q];
                for bi in 0..b {
                    for ci in 0..c {
                        let dst = (bi * c + ci) * q;
                        let src = (bi * c + ci) * sites * k;
                        let idx = &indices[bi * sites * k..(bi + 1) * sites * k];
                        for (j, &site) in idx.iter().enumerate() {
                            contrib[dst + site as usize] += g[src + j];
                        }
                    }
                }
                add_to_grad(p, &contrib);
            }),
        )
    }
}
