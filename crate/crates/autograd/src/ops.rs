//! Differentiable operations on [`Var`].
//!
//! Every backward rule is expressed with other `Var` operations so that it
//! can be differentiated again. Rules whose derivative is piecewise constant
//! (ReLU, |x|, clamps) multiply by a constant mask.

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::tensor::{self, ConvGeom, Tensor};

fn reduce_grad(g: &Var, shape: &[usize]) -> Result<Var> {
    if g.shape() == shape {
        Ok(g.clone())
    } else {
        g.sum_to(shape)
    }
}

impl Var {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f32) -> f32,
        backward: impl Fn(&Var, &Var, &Var) -> Result<Var> + 'static,
    ) -> Var {
        let value = self.value().map(f);
        Var::from_op(
            value,
            op,
            vec![self.clone()],
            Box::new(move |inputs, out, g| Ok(vec![Some(backward(&inputs[0], out, g)?)])),
        )
    }

    /// Multiply by a constant mask derived from the input value.
    fn masked_grad(x: &Var, g: &Var, mask: impl Fn(f32) -> f32) -> Result<Var> {
        g.mul(&Var::constant(x.value().map(mask)))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let value = tensor::broadcast_binary(&self.value(), &other.value(), |a, b| a + b)?;
        Ok(Var::from_op(
            value,
            "add",
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| {
                Ok(vec![
                    Some(reduce_grad(g, &inputs[0].shape())?),
                    Some(reduce_grad(g, &inputs[1].shape())?),
                ])
            }),
        ))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let value = tensor::broadcast_binary(&self.value(), &other.value(), |a, b| a - b)?;
        Ok(Var::from_op(
            value,
            "sub",
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| {
                Ok(vec![
                    Some(reduce_grad(g, &inputs[0].shape())?),
                    Some(reduce_grad(&g.neg(), &inputs[1].shape())?),
                ])
            }),
        ))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        let value = tensor::broadcast_binary(&self.value(), &other.value(), |a, b| a * b)?;
        Ok(Var::from_op(
            value,
            "mul",
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = if a.requires_grad() {
                    Some(reduce_grad(&g.mul(b)?, &a.shape())?)
                } else {
                    None
                };
                let gb = if b.requires_grad() {
                    Some(reduce_grad(&g.mul(a)?, &b.shape())?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        ))
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        let value = tensor::broadcast_binary(&self.value(), &other.value(), |a, b| a / b)?;
        Ok(Var::from_op(
            value,
            "div",
            vec![self.clone(), other.clone()],
            Box::new(|inputs, out, g| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = if a.requires_grad() {
                    Some(reduce_grad(&g.div(b)?, &a.shape())?)
                } else {
                    None
                };
                let gb = if b.requires_grad() {
                    Some(reduce_grad(&g.mul(out)?.div(b)?.neg(), &b.shape())?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        ))
    }

    pub fn neg(&self) -> Var {
        self.unary("neg", |v| -v, |_, _, g| Ok(g.neg()))
    }

    pub fn scale(&self, c: f32) -> Var {
        self.unary("scale", move |v| v * c, move |_, _, g| Ok(g.scale(c)))
    }

    pub fn add_scalar(&self, c: f32) -> Var {
        self.unary("add_scalar", move |v| v + c, |_, _, g| Ok(g.clone()))
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f32) -> Var {
        self.unary("rsub_scalar", move |v| c - v, |_, _, g| Ok(g.neg()))
    }

    pub fn exp(&self) -> Var {
        self.unary("exp", f32::exp, |_, out, g| g.mul(out))
    }

    pub fn log(&self) -> Var {
        self.unary("log", f32::ln, |x, _, g| g.div(x))
    }

    pub fn sqrt(&self) -> Var {
        self.unary("sqrt", f32::sqrt, |_, out, g| Ok(g.div(out)?.scale(0.5)))
    }

    pub fn square(&self) -> Var {
        self.unary("square", |v| v * v, |x, _, g| Ok(g.mul(x)?.scale(2.0)))
    }

    pub fn tanh(&self) -> Var {
        self.unary("tanh", f32::tanh, |_, out, g| {
            g.mul(&out.square().rsub_scalar(1.0))
        })
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(
            "sigmoid",
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            |_, out, g| g.mul(out)?.mul(&out.rsub_scalar(1.0)),
        )
    }

    pub fn relu(&self) -> Var {
        self.unary(
            "relu",
            |v| v.max(0.0),
            |x, _, g| Var::masked_grad(x, g, |v| if v > 0.0 { 1.0 } else { 0.0 }),
        )
    }

    pub fn leaky_relu(&self, slope: f32) -> Var {
        self.unary(
            "leaky_relu",
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _, g| Var::masked_grad(x, g, move |v| if v > 0.0 { 1.0 } else { slope }),
        )
    }

    pub fn abs(&self) -> Var {
        self.unary("abs", f32::abs, |x, _, g| {
            Var::masked_grad(x, g, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        })
    }

    /// `max(self, lo)`; the gradient is passed where the input is kept.
    pub fn clamp_min(&self, lo: f32) -> Var {
        self.unary(
            "clamp_min",
            move |v| v.max(lo),
            move |x, _, g| Var::masked_grad(x, g, move |v| if v >= lo { 1.0 } else { 0.0 }),
        )
    }

    pub fn sum_to(&self, shape: &[usize]) -> Result<Var> {
        let value = tensor::sum_to(&self.value(), shape)?;
        Ok(Var::from_op(
            value,
            "sum_to",
            vec![self.clone()],
            Box::new(|inputs, _, g| Ok(vec![Some(g.broadcast_to(&inputs[0].shape())?)])),
        ))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let value = tensor::broadcast_to(&self.value(), shape)?;
        Ok(Var::from_op(
            value,
            "broadcast_to",
            vec![self.clone()],
            Box::new(|inputs, _, g| Ok(vec![Some(g.sum_to(&inputs[0].shape())?)])),
        ))
    }

    /// Sum over `axes`, keeping them with extent 1.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var> {
        let mut shape = self.shape();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::Shape(format!("axis {a} of {:?}", self.shape())));
            }
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count.max(1) as f32))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Var {
        self.sum_to(&[]).expect("any shape reduces to a scalar")
    }

    pub fn mean_all(&self) -> Var {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f32)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = self.value().reshape(shape)?;
        Ok(Var::from_op(
            value,
            "reshape",
            vec![self.clone()],
            Box::new(|inputs, _, g| Ok(vec![Some(g.reshape(&inputs[0].shape())?)])),
        ))
    }

    /// Collapse everything after the first axis.
    pub fn flatten(&self) -> Result<Var> {
        let shape = self.shape();
        let n = *shape.first().unwrap_or(&1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(&[n, rest])
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value().narrow(axis, start, len)?;
        Ok(Var::from_op(
            value,
            "narrow",
            vec![self.clone()],
            Box::new(move |inputs, _, g| {
                let total = inputs[0].shape()[axis];
                Ok(vec![Some(g.pad_axis(axis, start, total)?)])
            }),
        ))
    }

    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Result<Var> {
        let value = self.value().pad_axis(axis, start, total)?;
        Ok(Var::from_op(
            value,
            "pad_axis",
            vec![self.clone()],
            Box::new(move |inputs, _, g| {
                let len = inputs[0].shape()[axis];
                Ok(vec![Some(g.narrow(axis, start, len)?)])
            }),
        ))
    }

    pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<Tensor> = parts.iter().map(Var::value).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let value = Tensor::concat(&refs, axis)?;
        Ok(Var::from_op(
            value,
            "concat",
            parts.to_vec(),
            Box::new(move |inputs, _, g| {
                let mut start = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for input in inputs {
                    let len = input.shape()[axis];
                    out.push(if input.requires_grad() {
                        Some(g.narrow(axis, start, len)?)
                    } else {
                        None
                    });
                    start += len;
                }
                Ok(out)
            }),
        ))
    }

    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let value = tensor::matmul(&self.value(), &other.value())?;
        Ok(Var::from_op(
            value,
            "matmul",
            vec![self.clone(), other.clone()],
            Box::new(|inputs, _, g| {
                let (a, b) = (&inputs[0], &inputs[1]);
                let ga = if a.requires_grad() {
                    Some(g.matmul(&b.transpose()?)?)
                } else {
                    None
                };
                let gb = if b.requires_grad() {
                    Some(a.transpose()?.matmul(g)?)
                } else {
                    None
                };
                Ok(vec![ga, gb])
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Var> {
        let value = tensor::transpose2d(&self.value())?;
        Ok(Var::from_op(
            value,
            "transpose",
            vec![self.clone()],
            Box::new(|_, _, g| Ok(vec![Some(g.transpose()?)])),
        ))
    }

    /// 2-D convolution, `self: [N,Ci,H,W]`, `weight: [Co,Ci,k,k]`, no bias.
    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Result<Var> {
        let value = tensor::conv2d(&self.value(), &weight.value(), geom)?;
        Ok(Var::from_op(
            value,
            "conv2d",
            vec![self.clone(), weight.clone()],
            Box::new(move |inputs, _, g| {
                let (x, w) = (&inputs[0], &inputs[1]);
                let shape = x.shape();
                let gx = if x.requires_grad() {
                    Some(g.conv2d_input_grad(w, geom, shape[2], shape[3])?)
                } else {
                    None
                };
                let gw = if w.requires_grad() {
                    Some(x.conv2d_weight_grad(g, geom)?)
                } else {
                    None
                };
                Ok(vec![gx, gw])
            }),
        ))
    }

    /// Adjoint of [`Var::conv2d`] in its input: `self: [N,Co,Ho,Wo]`,
    /// `weight: [Co,Ci,k,k]` → `[N,Ci,height,width]`. Used as the transposed
    /// convolution.
    pub fn conv2d_input_grad(&self, weight: &Var, geom: ConvGeom, height: usize, width: usize) -> Result<Var> {
        let value = tensor::conv2d_input_grad(&self.value(), &weight.value(), geom, height, width)?;
        Ok(Var::from_op(
            value,
            "conv2d_input_grad",
            vec![self.clone(), weight.clone()],
            Box::new(move |inputs, _, g| {
                let (gy, w) = (&inputs[0], &inputs[1]);
                let d_gy = if gy.requires_grad() {
                    Some(g.conv2d(w, geom)?)
                } else {
                    None
                };
                let d_w = if w.requires_grad() {
                    Some(g.conv2d_weight_grad(gy, geom)?)
                } else {
                    None
                };
                Ok(vec![d_gy, d_w])
            }),
        ))
    }

    /// Adjoint of [`Var::conv2d`] in its weight: `self` is the convolution
    /// input `[N,Ci,H,W]`, `gy` the output-shaped `[N,Co,Ho,Wo]`.
    pub fn conv2d_weight_grad(&self, gy: &Var, geom: ConvGeom) -> Result<Var> {
        let value = tensor::conv2d_weight_grad(&self.value(), &gy.value(), geom)?;
        Ok(Var::from_op(
            value,
            "conv2d_weight_grad",
            vec![self.clone(), gy.clone()],
            Box::new(move |inputs, _, g| {
                let (x, gy) = (&inputs[0], &inputs[1]);
                let shape = x.shape();
                let d_x = if x.requires_grad() {
                    Some(gy.conv2d_input_grad(g, geom, shape[2], shape[3])?)
                } else {
                    None
                };
                let d_gy = if gy.requires_grad() {
                    Some(x.conv2d(g, geom)?)
                } else {
                    None
                };
                Ok(vec![d_x, d_gy])
            }),
        ))
    }

    /// Transposed convolution with a `[Cin,Cout,k,k]` weight, producing an
    /// output of spatial size `out_hw`.
    pub fn conv_transpose2d(&self, weight: &Var, geom: ConvGeom, out_hw: (usize, usize)) -> Result<Var> {
        self.conv2d_input_grad(weight, geom, out_hw.0, out_hw.1)
    }

    /// Numerically stable `log(sum(exp(x)))` over the last axis (kept).
    pub fn logsumexp_last(&self) -> Result<Var> {
        let shape = self.shape();
        let last = shape.len().checked_sub(1).ok_or_else(|| {
            Error::Shape("logsumexp of a scalar".into())
        })?;
        let m = Var::constant(self.value().max_last_axis());
        let shifted = self.sub(&m)?;
        shifted.exp().sum_axes(&[last])?.log().add(&m)
    }
}
