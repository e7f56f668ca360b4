//! Instance normalization.

use super::{add_to_grad, Tensor};
use crate::error::{Error, Result};
use alloc::boxed::Box;
use alloc::vec::Vec;

impl Tensor {
    /// Instance normalization over `[B, C, H, W]`: every `(batch, channel)`
    /// plane is standardized with its own mean and *biased* variance
    /// (divide by `H*W`), then scaled and shifted per channel:
    ///
    /// `y = scale[c] * (x - mean) / sqrt(var + eps) + shift[c]`
    ///
    /// `scale` and `shift` have shape `[C]`.
    pub fn instance_norm(&self, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
        const OP: &str = "instance_norm";
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::shape(
                OP,
                alloc::format!("input must be [batch, ch, h, w], got {xs:?}"),
            ));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let plane = h * w;
        if plane == 0 {
            return Err(Error::arg(OP, "spatial plane has no elements"));
        }
        for (name, t) in [("scale", scale), ("shift", shift)] {
            let s = t.shape();
            if s != [c] {
                return Err(Error::shape(
                    OP,
                    alloc::format!("{name} must have shape [{c}], got {s:?}"),
                ));
            }
        }
        if eps < 0.0 {
            return Err(Error::arg(OP, alloc::format!("eps must be non-negative, got {eps}")));
        }

        let mut data = alloc::vec![0.0; b * c * plane];
        let mut means = alloc::vec![0.0; b * c];
        let mut inv_stds = alloc::vec![0.0; b * c];
        {
            let xn = self.node();
            let sn = scale.node();
            let tn = shift.node();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let src = &xn.data[base..base + plane];
                    let mean = src.iter().sum::<f64>() / plane as f64;
                    let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
                    let inv_std = 1.0 / libm::sqrt(var + eps);
                    means[bi * c + ci] = mean;
                    inv_stds[bi * c + ci] = inv_std;
                    let (ga, be) = (sn.data[ci], tn.data[ci]);
                    for (dst, v) in data[base..base + plane].iter_mut().zip(src) {
                        *dst = ga * (v - mean) * inv_std + be;
                    }
                }
            }
        }
        Tensor::from_op(
            OP,
            data,
            xs.clone(),
            alloc::vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |n| {
                let (x, sc, sh) = (&n.parents[0], &n.parents[1], &n.parents[2]);
                let gy = n.grad_slice();
                let need_x = x.requires_grad();
                let need_s = sc.requires_grad();
                let need_h = sh.requires_grad();
                if !(need_x || need_s || need_h) {
                    return;
                }
                let xn = x.node();
                let scn = sc.node();
                let mut dx = if need_x { alloc::vec![0.0; xn.data.len()] } else { Vec::new() };
                let mut ds = if need_s { alloc::vec![0.0; c] } else { Vec::new() };
                let mut dh = if need_h { alloc::vec![0.0; c] } else { Vec::new() };
                let np = plane as f64;
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let src = &xn.data[base..base + plane];
                        let g = &gy[base..base + plane];
                        let mean = means[bi * c + ci];
                        let inv_std = inv_stds[bi * c + ci];
                        if need_h {
                            dh[ci] += g.iter().sum::<f64>();
                        }
                        if need_s || need_x {
                            // Work in the standardized coordinate xh.
                            let mut sum_g = 0.0;
                            let mut sum_gxh = 0.0;
                            for (gi, v) in g.iter().zip(src) {
                                let xh = (v - mean) * inv_std;
                                sum_g += gi;
                                sum_gxh += gi * xh;
                            }
                            if need_s {
                                ds[ci] += sum_gxh;
                            }
                            if need_x {
                                let ga = scn.data[ci];
                                let mg = sum_g / np;
                                let mgxh = sum_gxh / np;
                                for ((d, gi), v) in
                                    dx[base..base + plane].iter_mut().zip(g).zip(src)
                                {
                                    let xh = (v - mean) * inv_std;
                                    *d += ga * inv_std * (gi - mg - xh * mgxh);
                                }
                            }
                        }
                    }
                }
                drop(xn);
                drop(scn);
                if need_x {
                    add_to_grad(x, &dx);
                }
                if need_s {
                    add_to_grad(sc, &ds);
                }
                if need_h {
                    add_to_grad(sh, &dh);
                }
            }),
        )
    }
}
