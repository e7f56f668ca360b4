//! 2-D convolution and transposed convolution.
//!
//! Both directions lower onto the GEMM kernels via im2col/col2im patch
//! matrices, one batch item at a time. Patch matrices are recomputed in the
//! backward pass instead of cached, trading a little compute for not holding
//! `[C*k*k, H*W]` buffers alive in the graph.
//!
//! Layouts:
//! * `conv2d`: input `[B, Cin, H, W]`, weight `[Cout, Cin, kh, kw]`,
//!   bias `[Cout]`, output `[B, Cout, H', W']` with
//!   `H' = (H + 2*pad - kh) / stride + 1` (floor).
//! * `conv2d_transpose`: input `[B, Cin, H, W]`, weight `[Cin, Cout, kh, kw]`,
//!   bias `[Cout]`, output `[B, Cout, H2, W2]` with
//!   `H2 = (H - 1) * stride + kh - 2*pad`. With `kh = 2*stride` and
//!   `pad = stride / 2` this exactly inverts the matching strided conv shape.

use super::{add_to_grad, gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};
use alloc::boxed::Box;
use alloc::vec::Vec;

/// Geometry of one conv: image `[c, h, w]`, kernel `kh x kw`, producing an
/// `oh x ow` site grid. For transposed conv the roles of image and site grid
/// swap, the formulas stay the same.
#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(
        op: &'static str,
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Geom> {
        if stride == 0 {
            return Err(Error::arg(op, "stride must be at least 1"));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::arg(op, "kernel extents must be at least 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                op,
                alloc::format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Geom { c, h, w, kh, kw, stride, pad, oh, ow })
    }

    fn patch_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn sites(&self) -> usize {
        self.oh * self.ow
    }
}

/// Fill `cols` (`[c*kh*kw, oh*ow]`) with image patches; out-of-bounds reads
/// under padding become zeros.
fn im2col(src: &[f64], g: &Geom, cols: &mut [f64]) {
    debug_assert_eq!(src.len(), g.c * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_rows() * g.sites());
    let sites = g.sites();
    for ci in 0..g.c {
        let plane = &src[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * sites;
                let mut out_idx = row;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        cols[out_idx..out_idx + g.ow].fill(0.0);
                        out_idx += g.ow;
                        continue;
                    }
                    let row_base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        cols[out_idx] = if ix >= 0 && ix < g.w as isize {
                            plane[row_base + ix as usize]
                        } else {
                            0.0
                        };
                        out_idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back into an image: the adjoint of [`im2col`].
fn col2im_add(cols: &[f64], g: &Geom, dst: &mut [f64]) {
    debug_assert_eq!(dst.len(), g.c * g.h * g.w);
    debug_assert_eq!(cols.len(), g.patch_rows() * g.sites());
    let sites = g.sites();
    for ci in 0..g.c {
        let plane = &mut dst[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * sites;
                let mut src_idx = row;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        src_idx += g.ow;
                        continue;
                    }
                    let row_base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[row_base + ix as usize] += cols[src_idx];
                        }
                        src_idx += 1;
                    }
                }
            }
        }
    }
}

fn expect_dims(op: &'static str, name: &str, t: &Tensor, want: usize) -> Result<Vec<usize>> {
    let s = t.shape();
    if s.len() != want {
        return Err(Error::shape(
            op,
            alloc::format!("{name} must have {want} dimensions, got {s:?}"),
        ));
    }
    Ok(s)
}

impl Tensor {
    /// Strided 2-D convolution with zero padding.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        const OP: &str = "conv2d";
        let xs = expect_dims(OP, "input", self, 4)?;
        let ws = expect_dims(OP, "weight", weight, 4)?;
        let bs = expect_dims(OP, "bias", bias, 1)?;
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::shape(
                OP,
                alloc::format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if bs[0] != cout {
            return Err(Error::shape(
                OP,
                alloc::format!("bias has {} entries for {cout} output channels", bs[0]),
            ));
        }
        let g = Geom::new(OP, cin, h, w, kh, kw, stride, pad)?;
        let sites = g.sites();
        let rows = g.patch_rows();

        let mut data = alloc::vec![0.0; b * cout * sites];
        {
            let xn = self.node();
            let wn = weight.node();
            let bn = bias.node();
            let mut cols = alloc::vec![0.0; rows * sites];
            for bi in 0..b {
                im2col(&xn.data[bi * cin * h * w..(bi + 1) * cin * h * w], &g, &mut cols);
                let out = &mut data[bi * cout * sites..(bi + 1) * cout * sites];
                for co in 0..cout {
                    out[co * sites..(co + 1) * sites].fill(bn.data[co]);
                }
                gemm_nn(cout, rows, sites, &wn.data, &cols, out);
            }
        }
        Tensor::from_op(
            OP,
            data,
            alloc::vec![b, cout, g.oh, g.ow],
            alloc::vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |n| {
                let (x, wt, bt) = (&n.parents[0], &n.parents[1], &n.parents[2]);
                let gy = n.grad_slice();
                let need_x = x.requires_grad();
                let need_w = wt.requires_grad();
                let need_b = bt.requires_grad();
                if !(need_x || need_w || need_b) {
                    return;
                }
                let xn = x.node();
                let wn = wt.node();
                let mut dx = if need_x { alloc::vec![0.0; xn.data.len()] } else { Vec::new() };
                let mut dw = if need_w { alloc::vec![0.0; wn.data.len()] } else { Vec::new() };
                let mut db = if need_b { alloc::vec![0.0; cout] } else { Vec::new() };
                let mut cols = alloc::vec![0.0; rows * sites];
                let mut dcols = alloc::vec![0.0; rows * sites];
                for bi in 0..b {
                    let gy_b = &gy[bi * cout * sites..(bi + 1) * cout * sites];
                    if need_w || need_x {
                        im2col(&xn.data[bi * cin * h * w..(bi + 1) * cin * h * w], &g, &mut cols);
                    }
                    if need_w {
                        gemm_nt(cout, sites, rows, gy_b, &cols, &mut dw);
                    }
                    if need_x {
                        dcols.fill(0.0);
                        gemm_tn(rows, cout, sites, &wn.data, gy_b, &mut dcols);
                        col2im_add(&dcols, &g, &mut dx[bi * cin * h * w..(bi + 1) * cin * h * w]);
                    }
                    if need_b {
                        for co in 0..cout {
                            db[co] += gy_b[co * sites..(co + 1) * sites].iter().sum::<f64>();
                        }
                    }
                }
                drop(xn);
                drop(wn);
                if need_x {
                    add_to_grad(x, &dx);
                }
                if need_w {
                    add_to_grad(wt, &dw);
                }
                if need_b {
                    add_to_grad(bt, &db);
                }
            }),
        )
    }

    /// Transposed (fractionally strided) 2-D convolution: the adjoint of
    /// [`Tensor::conv2d`] in its spatial mapping, used for upsampling.
    pub fn conv2d_transpose(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        const OP: &str = "conv2d_transpose";
        let xs = expect_dims(OP, "input", self, 4)?;
        let ws = expect_dims(OP, "weight", weight, 4)?;
        let bs = expect_dims(OP, "bias", bias, 1)?;
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (wcin, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::shape(
                OP,
                alloc::format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if bs[0] != cout {
            return Err(Error::shape(
                OP,
                alloc::format!("bias has {} entries for {cout} output channels", bs[0]),
            ));
        }
        if stride == 0 {
            return Err(Error::arg(OP, "stride must be at least 1"));
        }
        let h2 = ((h - 1) * stride + kh).checked_sub(2 * pad).filter(|v| *v > 0);
        let w2 = ((w - 1) * stride + kw).checked_sub(2 * pad).filter(|v| *v > 0);
        let (h2, w2) = match (h2, w2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::shape(
                    OP,
                    alloc::format!("padding {pad} swallows the whole {h}x{w} upsampled output"),
                ))
            }
        };
        // The site grid of the equivalent forward conv must land exactly on
        // the input extents.
        let g = Geom::new(OP, cout, h2, w2, kh, kw, stride, pad)?;
        debug_assert_eq!((g.oh, g.ow), (h, w));
        let sites = h * w;
        let rows = g.patch_rows(); // cout * kh * kw

        let mut data = alloc::vec![0.0; b * cout * h2 * w2];
        {
            let xn = self.node();
            let wn = weight.node();
            let bn = bias.node();
            let mut cols = alloc::vec![0.0; rows * sites];
            for bi in 0..b {
                cols.fill(0.0);
                gemm_tn(
                    rows,
                    cin,
                    sites,
                    &wn.data,
                    &xn.data[bi * cin * sites..(bi + 1) * cin * sites],
                    &mut cols,
                );
                let out = &mut data[bi * cout * h2 * w2..(bi + 1) * cout * h2 * w2];
                col2im_add(&cols, &g, out);
                for co in 0..cout {
                    let bia = bn.data[co];
                    for v in out[co * h2 * w2..(co + 1) * h2 * w2].iter_mut() {
                        *v += bia;
                    }
                }
            }
        }
        Tensor::from_op(
            OP,
            data,
            alloc::vec![b, cout, h2, w2],
            alloc::vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |n| {
                let (x, wt, bt) = (&n.parents[0], &n.parents[1], &n.parents[2]);
                let gy = n.grad_slice();
                let need_x = x.requires_grad();
                let need_w = wt.requires_grad();
                let need_b = bt.requires_grad();
                if !(need_x || need_w || need_b) {
                    return;
                }
                let xn = x.node();
                let wn = wt.node();
                let mut dx = if need_x { alloc::vec![0.0; xn.data.len()] } else { Vec::new() };
                let mut dw = if need_w { alloc::vec![0.0; wn.data.len()] } else { Vec::new() };
                let mut db = if need_b { alloc::vec![0.0; cout] } else { Vec::new() };
                let mut dcols = alloc::vec![0.0; rows * sites];
                for bi in 0..b {
                    let gy_b = &gy[bi * cout * h2 * w2..(bi + 1) * cout * h2 * w2];
                    if need_x || need_w {
                        im2col(gy_b, &g, &mut dcols);
                    }
                    if need_x {
                        gemm_nn(
                            cin,
                            rows,
                            sites,
                            &wn.data,
                            &dcols,
                            &mut dx[bi * cin * sites..(bi + 1) * cin * sites],
                        );
                    }
                    if need_w {
                        gemm_nt(
                            cin,
                            sites,
                            rows,
                            &xn.data[bi * cin * sites..(bi + 1) * cin * sites],
                            &dcols,
                            &mut dw,
                        );
                    }
                    if need_b {
                        for co in 0..cout {
                            db[co] += gy_b[co * h2 * w2..(co + 1) * h2 * w2].iter().sum::<f64>();
                        }
                    }
                }
                drop(xn);
                drop(wn);
                if need_x {
                    add_to_grad(x, &dx);
                }
                if need_w {
                    add_to_grad(wt, &dw);
                }
                if need_b {
                    add_to_grad(bt, &db);
                }
            }),
        )
    }
}
