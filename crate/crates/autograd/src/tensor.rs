//! Dense, immutable, row-major `f32` tensors and the raw kernels the graph
//! operations are built from.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A shape is just the extent of each axis, outermost first.
pub type Shape = Vec<usize>;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a contiguous tensor.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Immutable tensor. Cloning shares the buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<[f32]>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Shape>, data: impl Into<Arc<[f32]>>) -> Result<Self> {
        let shape = shape.into();
        let data = data.into();
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Like [`Tensor::new`] but panics on a size mismatch; for kernels whose
    /// output size is correct by construction.
    pub(crate) fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: data.into(),
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::from_vec(vec![], vec![v])
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Tensor::from_vec(shape.to_vec(), vec![v; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], mean: f32, std: f32, rng: &mut R) -> Self {
        let normal = Normal::new(mean, std).expect("std must be finite and non-negative");
        let data = (0..numel(shape)).map(|_| normal.sample(rng)).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| lo + (hi - lo) * rng.random::<f32>())
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "zip_map on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_vec(self.shape.clone(), data))
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() as f32
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.numel() as f32
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::Shape(format!(
                "narrow({axis}, {start}, {len}) on {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor::from_vec(shape, out))
    }

    /// Zero-pad along `axis` so that `self` lands at `start` in an axis of
    /// length `total`. Adjoint of [`Tensor::narrow`].
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + self.shape[axis] > total {
            return Err(Error::Shape(format!(
                "pad_axis({axis}, {start}, {total}) on {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let len = self.shape[axis];
        let mut out = vec![0.0; outer * total * inner];
        for o in 0..outer {
            let src = &self.data[o * len * inner..(o + 1) * len * inner];
            let dst = o * total * inner + start * inner;
            out[dst..dst + len * inner].copy_from_slice(src);
        }
        let mut shape = self.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_vec(shape, out))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::Shape(format!("concat axis {axis} on rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|i| i == axis || p.shape[i] == first.shape[i]);
            if !ok {
                return Err(Error::Shape(format!(
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor::from_vec(shape, out))
    }

    /// Maximum along the last axis, keeping it with extent 1.
    pub fn max_last_axis(&self) -> Tensor {
        let inner = *self.shape.last().unwrap_or(&1);
        let data: Vec<f32> = self
            .data
            .chunks(inner.max(1))
            .map(|c| c.iter().copied().fold(f32::NEG_INFINITY, f32::max))
            .collect();
        let mut shape = self.shape.clone();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        Tensor::from_vec(shape, data)
    }
}

/// Shape produced by broadcasting `a` against `b` (numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Shape> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Per-output-axis strides of `shape` when viewed as broadcast to `out`
/// (zero where the axis is broadcast).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Merge adjacent axes whose strides are compatible in every operand so the
/// inner loops run over long contiguous stretches.
fn coalesce(shape: &[usize], operand_strides: &[Vec<usize>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut dims: Vec<usize> = Vec::new();
    let mut st: Vec<Vec<usize>> = vec![Vec::new(); operand_strides.len()];
    for (ax, &extent) in shape.iter().enumerate() {
        if extent == 1 {
            continue;
        }
        if let Some(last) = dims.last_mut() {
            let mergeable = operand_strides
                .iter()
                .zip(st.iter())
                .all(|(s, acc)| *acc.last().unwrap() == s[ax] * extent);
            if mergeable {
                *last *= extent;
                for (s, acc) in operand_strides.iter().zip(st.iter_mut()) {
                    *acc.last_mut().unwrap() = s[ax];
                }
                continue;
            }
        }
        dims.push(extent);
        for (s, acc) in operand_strides.iter().zip(st.iter_mut()) {
            acc.push(s[ax]);
        }
    }
    if dims.is_empty() {
        dims.push(1);
        for acc in st.iter_mut() {
            acc.push(0);
        }
    }
    (dims, st)
}

/// Visit every index of `dims` except the innermost, yielding the base
/// offsets of each operand.
fn for_each_outer(dims: &[usize], st: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    let outer_rank = dims.len() - 1;
    let mut idx = vec![0usize; outer_rank];
    let mut offs = vec![0usize; st.len()];
    loop {
        f(&offs);
        let mut ax = outer_rank;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            for (o, s) in offs.iter_mut().zip(st.iter()) {
                *o += s[ax];
            }
            if idx[ax] < dims[ax] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(st.iter()) {
                *o -= s[ax] * dims[ax];
            }
            idx[ax] = 0;
        }
    }
}

/// Elementwise binary kernel with broadcasting.
pub fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let so = strides(&out_shape);
    let (dims, st) = coalesce(&out_shape, &[sa, sb, so]);
    let mut out = vec![0.0f32; numel(&out_shape)];
    let inner = *dims.last().unwrap();
    let (ia, ib, io) = (st[0][dims.len() - 1], st[1][dims.len() - 1], st[2][dims.len() - 1]);
    let (ad, bd) = (a.data(), b.data());
    for_each_outer(&dims, &st, |offs| {
        let (mut pa, mut pb, mut po) = (offs[0], offs[1], offs[2]);
        for _ in 0..inner {
            out[po] = f(ad[pa], bd[pb]);
            pa += ia;
            pb += ib;
            po += io;
        }
    });
    Ok(Tensor::from_vec(out_shape, out))
}

/// Sum `x` down to `target`, which must broadcast to `x`'s shape.
pub fn sum_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    if x.shape == target {
        return Ok(x.clone());
    }
    let full = broadcast_shape(target, &x.shape)?;
    if full != x.shape {
        return Err(Error::Shape(format!(
            "cannot sum {:?} down to {:?}",
            x.shape, target
        )));
    }
    let sx = strides(&x.shape);
    let st_target = broadcast_strides(target, &x.shape);
    let (dims, st) = coalesce(&x.shape, &[sx, st_target]);
    let mut acc = vec![0.0f64; numel(target)];
    let inner = *dims.last().unwrap();
    let (ix, it) = (st[0][dims.len() - 1], st[1][dims.len() - 1]);
    let xd = x.data();
    for_each_outer(&dims, &st, |offs| {
        let (mut px, mut pt) = (offs[0], offs[1]);
        if it == 0 {
            let mut s = 0.0f64;
            for _ in 0..inner {
                s += xd[px] as f64;
                px += ix;
            }
            acc[pt] += s;
        } else {
            for _ in 0..inner {
                acc[pt] += xd[px] as f64;
                px += ix;
                pt += it;
            }
        }
    });
    Ok(Tensor::from_vec(
        target.to_vec(),
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}

pub fn broadcast_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    let full = broadcast_shape(&x.shape, target)?;
    if full != target {
        return Err(Error::Shape(format!(
            "cannot broadcast {:?} to {:?}",
            x.shape, target
        )));
    }
    broadcast_binary(x, &Tensor::zeros(target), |a, _| a)
}

/// `c = a · b` for row-major matrices `a: m×k`, `b: k×n`. Transposition is
/// expressed through the `trans_*` flags without copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: slice lengths are checked by the callers' shape contracts and
    // the strides above describe exactly the m×k, k×n and m×n extents.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Shape(format!(
            "matmul of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Ok(Tensor::from_vec(vec![m, n], out))
}

pub fn transpose2d(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!("transpose of {:?}", a.shape)));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Ok(Tensor::from_vec(vec![c, r], out))
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent for an input extent, or `None` if the kernel does not fit.
    pub fn out_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, cols: &mut [f32]) {
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ky as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kx as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, x: &mut [f32]) {
    let k = g.kernel;
    let (s, p) = (g.stride as isize, g.padding as isize);
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv(x: &[usize], w: &[usize]) -> Result<()> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[1] || w[2] != w[3] {
        return Err(Error::Shape(format!(
            "conv2d input {x:?} with weight {w:?}"
        )));
    }
    Ok(())
}

/// `x: [N,Ci,H,W]`, `w: [Co,Ci,k,k]` → `[N,Co,Ho,Wo]`.
pub fn conv2d(x: &Tensor, w: &Tensor, g: ConvGeom) -> Result<Tensor> {
    check_conv(&x.shape, &w.shape)?;
    if w.shape[2] != g.kernel {
        return Err(Error::Shape(format!("kernel {} vs weight {:?}", g.kernel, w.shape)));
    }
    let (n, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let co = w.shape[0];
    let (ho, wo) = match (g.out_size(h), g.out_size(wd)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape(format!("kernel {g:?} does not fit {:?}", x.shape))),
    };
    let kk = ci * g.kernel * g.kernel;
    let hw = ho * wo;
    let mut cols = vec![0.0; kk * hw];
    let mut out = vec![0.0; n * co * hw];
    for b in 0..n {
        let xs = &x.data[b * ci * h * wd..(b + 1) * ci * h * wd];
        im2col(xs, ci, h, wd, g, ho, wo, &mut cols);
        gemm(co, kk, hw, w.data(), false, &cols, false, &mut out[b * co * hw..(b + 1) * co * hw], false);
    }
    Ok(Tensor::from_vec(vec![n, co, ho, wo], out))
}

/// Gradient of [`conv2d`] with respect to its input: `gy: [N,Co,Ho,Wo]`,
/// `w: [Co,Ci,k,k]` → `[N,Ci,H,W]`. This is also the transposed convolution.
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, g: ConvGeom, h: usize, wd: usize) -> Result<Tensor> {
    if gy.rank() != 4 || w.rank() != 4 || gy.shape[1] != w.shape[0] || w.shape[2] != g.kernel {
        return Err(Error::Shape(format!(
            "conv transpose input {:?} with weight {:?}",
            gy.shape, w.shape
        )));
    }
    let (n, co, ho, wo) = (gy.shape[0], gy.shape[1], gy.shape[2], gy.shape[3]);
    if g.out_size(h) != Some(ho) || g.out_size(wd) != Some(wo) {
        return Err(Error::Shape(format!(
            "output size {h}x{wd} inconsistent with {:?} under {g:?}",
            gy.shape
        )));
    }
    let ci = w.shape[1];
    let kk = ci * g.kernel * g.kernel;
    let hw = ho * wo;
    let mut cols = vec![0.0; kk * hw];
    let mut out = vec![0.0; n * ci * h * wd];
    for b in 0..n {
        gemm(kk, co, hw, w.data(), true, &gy.data[b * co * hw..(b + 1) * co * hw], false, &mut cols, false);
        col2im(&cols, ci, h, wd, g, ho, wo, &mut out[b * ci * h * wd..(b + 1) * ci * h * wd]);
    }
    Ok(Tensor::from_vec(vec![n, ci, h, wd], out))
}

/// Gradient of [`conv2d`] with respect to its weight: `x: [N,Ci,H,W]`,
/// `gy: [N,Co,Ho,Wo]` → `[Co,Ci,k,k]`.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, g: ConvGeom) -> Result<Tensor> {
    if x.rank() != 4 || gy.rank() != 4 || x.shape[0] != gy.shape[0] {
        return Err(Error::Shape(format!(
            "conv weight grad of {:?} and {:?}",
            x.shape, gy.shape
        )));
    }
    let (n, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (co, ho, wo) = (gy.shape[1], gy.shape[2], gy.shape[3]);
    if g.out_size(h) != Some(ho) || g.out_size(wd) != Some(wo) {
        return Err(Error::Shape(format!(
            "gradient {:?} inconsistent with input {:?} under {g:?}",
            gy.shape, x.shape
        )));
    }
    let kk = ci * g.kernel * g.kernel;
    let hw = ho * wo;
    let mut cols = vec![0.0; kk * hw];
    let mut out = vec![0.0; co * kk];
    for b in 0..n {
        im2col(&x.data[b * ci * h * wd..(b + 1) * ci * h * wd], ci, h, wd, g, ho, wo, &mut cols);
        gemm(co, hw, kk, &gy.data[b * co * hw..(b + 1) * co * hw], false, &cols, true, &mut out, b > 0);
    }
    Ok(Tensor::from_vec(vec![co, ci, g.kernel, g.kernel], out))
}
