//! Elementwise arithmetic, activations, and dropout.
//!
//! Binary operations broadcast (right-aligned, NumPy-style); their backward
//! passes sum gradients back down over the broadcast dimensions.

use super::broadcast::{broadcast_shape, expand, reduce_to_shape};
use super::{add_to_grad, Tensor};
use crate::error::{Error, Result};
use alloc::boxed::Box;
use alloc::vec::Vec;
use rand::Rng;

fn broadcast_forward(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let an = a.node();
    let bn = b.node();
    let shape = broadcast_shape(op, &an.shape, &bn.shape)?;
    let data = if an.shape == bn.shape {
        an.data.iter().zip(&bn.data).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let av = expand(&an.data, &an.shape, &shape);
        let bv = expand(&bn.data, &bn.shape, &shape);
        av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect()
    };
    Ok((data, shape))
}

/// Shared scaffolding for unary maps: `df` receives (input, output) and
/// returns the local derivative.
fn unary_op(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    let (data, shape) = {
        let n = x.node();
        (n.data.iter().map(|&v| f(v)).collect::<Vec<f64>>(), n.shape.clone())
    };
    Tensor::from_op(
        op,
        data,
        shape,
        alloc::vec![x.clone()],
        Box::new(move |n| {
            let p = &n.parents[0];
            if !p.requires_grad() {
                return;
            }
            let contrib: Vec<f64> = {
                let pn = p.node();
                pn.data
                    .iter()
                    .zip(&n.data)
                    .zip(n.grad_slice())
                    .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                    .collect()
            };
            add_to_grad(p, &contrib);
        }),
    )
}

impl Tensor {
    // ------------------------------------------------------------- binary

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (data, shape) = broadcast_forward("add", self, other, |x, y| x + y)?;
        Tensor::from_op(
            "add",
            data,
            shape,
            alloc::vec![self.clone(), other.clone()],
            Box::new(|n| {
                for p in &n.parents {
                    if p.requires_grad() {
                        let contrib = reduce_to_shape(n.grad_slice(), &n.shape, &p.shape());
                        add_to_grad(p, &contrib);
                    }
                }
            }),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (data, shape) = broadcast_forward("sub", self, other, |x, y| x - y)?;
        Tensor::from_op(
            "sub",
            data,
            shape,
            alloc::vec![self.clone(), other.clone()],
            Box::new(|n| {
                let a = &n.parents[0];
                if a.requires_grad() {
                    let contrib = reduce_to_shape(n.grad_slice(), &n.shape, &a.shape());
                    add_to_grad(a, &contrib);
                }
                let b = &n.parents[1];
                if b.requires_grad() {
                    let mut contrib = reduce_to_shape(n.grad_slice(), &n.shape, &b.shape());
                    for c in contrib.iter_mut() {
                        *c = -*c;
                    }
                    add_to_grad(b, &contrib);
                }
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (data, shape) = broadcast_forward("mul", self, other, |x, y| x * y)?;
        Tensor::from_op(
            "mul",
            data,
            shape,
            alloc::vec![self.clone(), other.clone()],
            Box::new(|n| {
                let (a, b) = (&n.parents[0], &n.parents[1]);
                let g = n.grad_slice();
                if a.requires_grad() {
                    let full: Vec<f64> = {
                        let bn = b.node();
                        let bv = expand(&bn.data, &bn.shape, &n.shape);
                        g.iter().zip(&bv).map(|(&gi, &bi)| gi * bi).collect()
                    };
                    add_to_grad(a, &reduce_to_shape(&full, &n.shape, &a.shape()));
                }
                if b.requires_grad() {
                    let full: Vec<f64> = {
                        let an = a.node();
                        let av = expand(&an.data, &an.shape, &n.shape);
                        g.iter().zip(&av).map(|(&gi, &ai)| gi * ai).collect()
                    };
                    add_to_grad(b, &reduce_to_shape(&full, &n.shape, &b.shape()));
                }
            }),
        )
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (data, shape) = broadcast_forward("div", self, other, |x, y| x / y)?;
        Tensor::from_op(
            "div",
            data,
            shape,
            alloc::vec![self.clone(), other.clone()],
            Box::new(|n| {
                let (a, b) = (&n.parents[0], &n.parents[1]);
                let g = n.grad_slice();
                if a.requires_grad() {
                    let full: Vec<f64> = {
                        let bn = b.node();
                        let bv = expand(&bn.data, &bn.shape, &n.shape);
                        g.iter().zip(&bv).map(|(&gi, &bi)| gi / bi).collect()
                    };
                    add_to_grad(a, &reduce_to_shape(&full, &n.shape, &a.shape()));
                }
                if b.requires_grad() {
                    let full: Vec<f64> = {
                        let an = a.node();
                        let bn = b.node();
                        let av = expand(&an.data, &an.shape, &n.shape);
                        let bv = expand(&bn.data, &bn.shape, &n.shape);
                        g.iter()
                            .zip(&av)
                            .zip(&bv)
                            .map(|((&gi, &ai), &bi)| -gi * ai / (bi * bi))
                            .collect()
                    };
                    add_to_grad(b, &reduce_to_shape(&full, &n.shape, &b.shape()));
                }
            }),
        )
    }

    // -------------------------------------------------------------- unary

    pub fn relu(&self) -> Result<Tensor> {
        unary_op("relu", self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Leaky ReLU: `v` for positive inputs, `slope * v` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        unary_op(
            "leaky_relu",
            self,
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        unary_op("tanh", self, libm::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary_op("exp", self, libm::exp, |_, y| y)
    }

    /// Elementwise square root. Defined for non-negative inputs; the
    /// derivative diverges at exactly zero.
    pub fn sqrt(&self) -> Result<Tensor> {
        unary_op("sqrt", self, libm::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Result<Tensor> {
        unary_op("square", self, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Result<Tensor> {
        unary_op("abs", self, libm::fabs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Smooth-L1 kernel applied elementwise: `0.5 v^2` for `|v| < 1`,
    /// `|v| - 0.5` otherwise. Its derivative is `v` clamped to `[-1, 1]`.
    pub fn huber(&self) -> Result<Tensor> {
        unary_op(
            "huber",
            self,
            |v| {
                let a = libm::fabs(v);
                if a < 1.0 {
                    0.5 * v * v
                } else {
                    a - 0.5
                }
            },
            |x, _| x.clamp(-1.0, 1.0),
        )
    }

    /// Elementwise `max(v, floor)`; the gradient is zero at and below the
    /// floor (one-sided subgradient), which is what hinge terms want.
    pub fn max_with_scalar(&self, floor: f64) -> Result<Tensor> {
        unary_op(
            "max_with_scalar",
            self,
            move |v| v.max(floor),
            move |x, _| if x > floor { 1.0 } else { 0.0 },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        unary_op("add_scalar", self, move |v| v + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        unary_op("mul_scalar", self, move |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.mul_scalar(-1.0)
    }

    // ------------------------------------------------------------ dropout

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`, so
    /// the expectation is unchanged. In eval mode (or at rate 0) this is the
    /// identity. Each element consumes exactly one draw from `rng`, keeping
    /// stream positions reproducible.
    pub fn dropout<R: Rng>(&self, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(
                "dropout",
                alloc::format!("rate must be in [0, 1), got {rate}"),
            ));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let scale = 1.0 / (1.0 - rate);
        let (data, shape, mask) = {
            let n = self.node();
            let mask: Vec<f64> = n
                .data
                .iter()
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
                .collect();
            let data: Vec<f64> = n.data.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            (data, n.shape.clone(), mask)
        };
        Tensor::from_op(
            "dropout",
            data,
            shape,
            alloc::vec![self.clone()],
            Box::new(move |n| {
                let p = &n.parents[0];
                if !p.requires_grad() {
                    return;
                }
                let contrib: Vec<f64> =
                    n.grad_slice().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                add_to_grad(p, &contrib);
            }),
        )
    }
}
