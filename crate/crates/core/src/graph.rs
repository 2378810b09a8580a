//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles during
//! the forward pass. [`Graph::backward`] replays the list in reverse and
//! accumulates vector-Jacobian products. Graphs are cheap and meant to be
//! built once per example and dropped afterwards.

use std::cell::{Ref, RefCell};

use crate::error::{CoreError, Result};
use crate::kernels::{self, ConvGeometry, DeconvGeometry};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation whose forward and backward passes are supplied by the caller.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Gradient with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    Abs(Var),
    Clamp { src: Var, lo: f64, hi: f64 },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    SliceRows { src: Var, start: usize },
    Columns { src: Var, idx: Vec<usize> },
    BroadcastCols(Var),
    AddColBcast(Var, Var),
    MulRowBcast(Var, Var),
    Softmax { src: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, k: Var, b: Option<Var>, geom: ConvGeometry },
    Deconv2d { x: Var, k: Var, b: Option<Var>, geom: DeconvGeometry },
    MaxPool2 { src: Var, argmax: Vec<usize> },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    StraightThrough(Var),
    Custom { op: Box<dyn CustomOp>, inputs: Vec<Var> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording tape. Operations take `&self` so calls can be nested.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn strides_for_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

/// Softmax along `axis` with max subtraction. Masked positions along the
/// axis get probability zero.
pub fn softmax_values(x: &Tensor, axis: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let (outer, n, inner) = strides_for_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let keep = |j: usize| mask.is_none_or(|m| m[j]);
            let mut mx = f64::NEG_INFINITY;
            for j in (0..n).filter(|&j| keep(j)) {
                mx = mx.max(d[at(j)]);
            }
            let mut z = 0.0;
            for j in (0..n).filter(|&j| keep(j)) {
                let e = (d[at(j)] - mx).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in (0..n).filter(|&j| keep(j)) {
                out[at(j)] /= z;
            }
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    fn with<T>(&self, v: Var, f: impl FnOnce(&Tensor) -> T) -> T {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn unary(&self, src: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with(src, |t| t.map(f));
        let ng = self.needs(&[src]);
        self.push(value, op, ng)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v`'s value cut from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.with(v, |t| t.shape().to_vec())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("add", x, y)?;
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("sub", x, y)?;
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::Sub(a, b), self.needs(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            same_shape("mul", x, y)?;
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::Mul(a, b), self.needs(&[a, b])))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// `a + c` elementwise.
    pub fn offset(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// `log(sigmoid(a))`, stable for saturated inputs.
    pub fn log_sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// Clamp into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp { src: a, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
                return Err(CoreError::shape(
                    "matmul",
                    format!("{:?} x {:?}", x.shape(), y.shape()),
                ));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            Tensor::new(&[m, n], matmul_raw(x.data(), y.data(), m, k, n))?
        };
        Ok(self.push(value, Op::MatMul(a, b), self.needs(&[a, b])))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.shape().len() != 2 {
                return Err(CoreError::shape("transpose", format!("{:?}", x.shape())));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            Tensor::new(&[c, r], transpose_raw(x.data(), r, c))?
        };
        Ok(self.push(value, Op::Transpose(a), self.needs(&[a])))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.with(a, |t| t.reshape(shape))?;
        Ok(self.push(value, Op::Reshape(a), self.needs(&[a])))
    }

    /// Concatenation along axis 0; trailing extents must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::shape("concat", "no inputs"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].0].value;
            let trailing = first.shape()[1..].to_vec();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                if t.shape().is_empty() || t.shape()[1..] != trailing[..] {
                    return Err(CoreError::shape(
                        "concat",
                        format!("{:?} vs {:?}", t.shape(), first.shape()),
                    ));
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend_from_slice(&trailing);
            Tensor::new(&shape, data)?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec()), self.needs(parts)))
    }

    /// Rows `start..start + len` of axis 0.
    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.with(a, |t| {
            let shape = t.shape();
            if shape.is_empty() || start + len > shape[0] || len == 0 {
                return Err(CoreError::shape(
                    "slice_rows",
                    format!("rows {start}..{} of {shape:?}", start + len),
                ));
            }
            let row: usize = shape[1..].iter().product();
            let mut s = shape.to_vec();
            s[0] = len;
            Tensor::new(&s, t.data()[start * row..(start + len) * row].to_vec())
        })?;
        Ok(self.push(value, Op::SliceRows { src: a, start }, self.needs(&[a])))
    }

    /// Selected columns of a 2-D tensor, in the given order (repeats allowed).
    pub fn columns(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = self.with(a, |t| {
            if t.shape().len() != 2 || idx.is_empty() || idx.iter().any(|&j| j >= t.shape()[1]) {
                return Err(CoreError::shape(
                    "columns",
                    format!("columns {idx:?} of {:?}", t.shape()),
                ));
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(r * idx.len());
            for i in 0..r {
                for &j in idx {
                    data.push(t.data()[i * c + j]);
                }
            }
            Tensor::new(&[r, idx.len()], data)
        })?;
        Ok(self.push(
            value,
            Op::Columns {
                src: a,
                idx: idx.to_vec(),
            },
            self.needs(&[a]),
        ))
    }

    /// Repeats an `[R, 1]` column `n` times into `[R, n]`.
    pub fn broadcast_cols(&self, a: Var, n: usize) -> Result<Var> {
        let value = self.with(a, |t| {
            let (r, c) = t.rows_cols();
            if c != 1 || n == 0 {
                return Err(CoreError::shape("broadcast_cols", format!("{:?} to {n} columns", t.shape())));
            }
            let mut data = Vec::with_capacity(r * n);
            for i in 0..r {
                data.extend(std::iter::repeat_n(t.data()[i], n));
            }
            Tensor::new(&[r, n], data)
        })?;
        Ok(self.push(value, Op::BroadcastCols(a), self.needs(&[a])))
    }

    /// `a[i, j] + b[i]` where `a` is viewed as rows x cols.
    pub fn add_col_bcast(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (r, c) = x.rows_cols();
            if y.numel() != r {
                return Err(CoreError::shape(
                    "add_col_bcast",
                    format!("{:?} + {:?}", x.shape(), y.shape()),
                ));
            }
            let mut data = x.data().to_vec();
            for i in 0..r {
                data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v += y.data()[i]);
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::AddColBcast(a, b), self.needs(&[a, b])))
    }

    /// `a[i, j] * w[j]` where `a` is viewed as rows x cols.
    pub fn mul_row_bcast(&self, a: Var, w: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[w.0].value);
            let (r, c) = x.rows_cols();
            if y.numel() != c {
                return Err(CoreError::shape(
                    "mul_row_bcast",
                    format!("{:?} * {:?}", x.shape(), y.shape()),
                ));
            }
            let mut data = x.data().to_vec();
            for i in 0..r {
                for (v, s) in data[i * c..(i + 1) * c].iter_mut().zip(y.data()) {
                    *v *= s;
                }
            }
            Tensor::new(x.shape(), data)?
        };
        Ok(self.push(value, Op::MulRowBcast(a, w), self.needs(&[a, w])))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(a, axis, None)
    }

    /// Softmax along `axis`; positions with `mask[j] == false` get zero mass.
    pub fn softmax_masked(&self, a: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let value = self.with(a, |t| {
            if axis >= t.shape().len() {
                return Err(CoreError::shape("softmax", format!("axis {axis} of {:?}", t.shape())));
            }
            if let Some(m) = mask {
                if m.len() != t.shape()[axis] || !m.iter().any(|&k| k) {
                    return Err(CoreError::shape(
                        "softmax",
                        format!("mask {m:?} along axis {axis} of {:?}", t.shape()),
                    ));
                }
            }
            Tensor::new(t.shape(), softmax_values(t, axis, mask))
        })?;
        Ok(self.push(value, Op::Softmax { src: a, axis }, self.needs(&[a])))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = self.with(a, |t| Tensor::scalar(t.sum()));
        self.push(value, Op::Sum(a), self.needs(&[a]))
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = self.with(a, |t| Tensor::scalar(t.sum() / t.numel() as f64));
        self.push(value, Op::Mean(a), self.needs(&[a]))
    }

    /// 2-D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`.
    pub fn conv2d(&self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let (xt, kt) = (&nodes[x.0].value, &nodes[k.0].value);
            let (xs, ks) = (xt.shape(), kt.shape());
            if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != ks[3] || stride == 0 {
                return Err(CoreError::shape(
                    "conv2d",
                    format!("input {xs:?}, kernel {ks:?}, stride {stride}"),
                ));
            }
            if xs[1] + 2 * pad < ks[2] || xs[2] + 2 * pad < ks[2] {
                return Err(CoreError::shape(
                    "conv2d",
                    format!("kernel {} larger than padded input {xs:?} (pad {pad})", ks[2]),
                ));
            }
            let geom = ConvGeometry {
                c_in: xs[0],
                c_out: ks[0],
                h: xs[1],
                w: xs[2],
                k: ks[2],
                stride,
                pad,
            };
            let bias = match b {
                Some(bv) => {
                    let bt = &nodes[bv.0].value;
                    if bt.numel() != geom.c_out {
                        return Err(CoreError::shape(
                            "conv2d",
                            format!("bias {:?} for {} output channels", bt.shape(), geom.c_out),
                        ));
                    }
                    Some(bt.data())
                }
                None => None,
            };
            let out = kernels::conv2d_forward(&geom, xt.data(), kt.data(), bias);
            (Tensor::new(&[geom.c_out, geom.out_h(), geom.out_w()], out)?, geom)
        };
        let mut deps = vec![x, k];
        deps.extend(b);
        let ng = self.needs(&deps);
        Ok(self.push(value, Op::Conv2d { x, k, b, geom }, ng))
    }

    /// Transposed convolution of `[C_in, H, W]` with `[C_in, C_out, k, k]`.
    pub fn deconv2d(&self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (value, geom) = {
            let nodes = self.nodes.borrow();
            let (xt, kt) = (&nodes[x.0].value, &nodes[k.0].value);
            let (xs, ks) = (xt.shape(), kt.shape());
            if xs.len() != 3 || ks.len() != 4 || ks[0] != xs[0] || ks[2] != ks[3] || stride == 0 {
                return Err(CoreError::shape(
                    "deconv2d",
                    format!("input {xs:?}, kernel {ks:?}, stride {stride}"),
                ));
            }
            if (xs[1] - 1) * stride + ks[2] <= 2 * pad || (xs[2] - 1) * stride + ks[2] <= 2 * pad {
                return Err(CoreError::shape("deconv2d", format!("padding {pad} crops all of {xs:?}")));
            }
            let geom = DeconvGeometry {
                c_in: xs[0],
                c_out: ks[1],
                h: xs[1],
                w: xs[2],
                k: ks[2],
                stride,
                pad,
            };
            let bias = match b {
                Some(bv) => {
                    let bt = &nodes[bv.0].value;
                    if bt.numel() != geom.c_out {
                        return Err(CoreError::shape(
                            "deconv2d",
                            format!("bias {:?} for {} output channels", bt.shape(), geom.c_out),
                        ));
                    }
                    Some(bt.data())
                }
                None => None,
            };
            let out = kernels::deconv2d_forward(&geom, xt.data(), kt.data(), bias);
            (Tensor::new(&[geom.c_out, geom.out_h(), geom.out_w()], out)?, geom)
        };
        let mut deps = vec![x, k];
        deps.extend(b);
        let ng = self.needs(&deps);
        Ok(self.push(value, Op::Deconv2d { x, k, b, geom }, ng))
    }

    /// 2x2 max pool over `[C, H, W]`.
    pub fn maxpool2(&self, x: Var) -> Result<Var> {
        let (value, argmax) = self.with(x, |t| {
            let s = t.shape();
            if s.len() != 3 {
                return Err(CoreError::shape("maxpool2", format!("{s:?}")));
            }
            let (out, arg) = kernels::maxpool2_forward(s[0], s[1], s[2], t.data());
            Ok((Tensor::new(&[s[0], s[1].div_ceil(2), s[2].div_ceil(2)], out)?, arg))
        })?;
        Ok(self.push(value, Op::MaxPool2 { src: x, argmax }, self.needs(&[x])))
    }

    /// Mean over positions of `-log softmax(logits)[label]`. Axis 0 holds the
    /// classes; the remaining axes are positions.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (value, probs) = self.with(logits, |t| {
            let classes = t.shape().first().copied().unwrap_or(1);
            let positions = t.numel() / classes;
            if labels.len() != positions {
                return Err(CoreError::shape(
                    "softmax_cross_entropy",
                    format!("{} labels for logits {:?}", labels.len(), t.shape()),
                ));
            }
            if let Some(p) = labels.iter().position(|&y| y >= classes) {
                return Err(CoreError::shape(
                    "softmax_cross_entropy",
                    format!("label {} at position {p} outside 0..{classes}", labels[p]),
                ));
            }
            let probs = softmax_values(t, 0, None);
            let mut loss = 0.0;
            let d = t.data();
            for (p, &y) in labels.iter().enumerate() {
                // log-sum-exp form for accuracy when the target probability underflows
                let mx = (0..classes).map(|c| d[c * positions + p]).fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + (0..classes).map(|c| (d[c * positions + p] - mx).exp()).sum::<f64>().ln();
                loss += lse - d[y * positions + p];
            }
            Ok((Tensor::scalar(loss / positions as f64), probs))
        })?;
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            self.needs(&[logits]),
        ))
    }

    /// One-hot of the per-column argmax of a 2-D tensor (first index on
    /// ties). The backward pass is the identity, so gradients flow to the
    /// soft input unchanged.
    pub fn straight_through(&self, a: Var) -> Result<Var> {
        let value = self.with(a, |t| {
            if t.shape().len() != 2 {
                return Err(CoreError::shape("straight_through", format!("{:?}", t.shape())));
            }
            let (r, c) = (t.shape()[0], t.shape()[1]);
            let mut data = vec![0.0; r * c];
            for j in 0..c {
                let best = (0..r)
                    .fold(0, |b, i| if t.data()[i * c + j] > t.data()[b * c + j] { i } else { b });
                data[best * c + j] = 1.0;
            }
            Tensor::new(t.shape(), data)
        })?;
        Ok(self.push(value, Op::StraightThrough(a), self.needs(&[a])))
    }

    pub fn custom(&self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let ins: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            op.forward(&ins)?
        };
        let ng = self.needs(inputs);
        Ok(self.push(
            value,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward from a non-scalar");
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, t: Tensor| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape(), data).expect("grad shape");
            let gd = g.data();
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a).data(), val(*b).data());
                    acc(*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * y).collect()));
                    acc(*b, like(*b, gd.iter().zip(x).map(|(g, x)| g * x).collect()));
                }
                Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
                Op::Offset(a) => acc(*a, g.clone()),
                Op::Relu(a) => {
                    let x = val(*a).data();
                    acc(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    acc(*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()));
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()));
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    acc(*a, like(*a, gd.iter().zip(y).map(|(g, y)| g * y).collect()));
                }
                Op::Log(a) => {
                    let x = val(*a).data();
                    acc(*a, like(*a, gd.iter().zip(x).map(|(g, x)| g / x).collect()));
                }
                Op::LogSigmoid(a) => {
                    let x = val(*a).data();
                    acc(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| g * sigmoid(-x)).collect()));
                }
                Op::Abs(a) => {
                    let x = val(*a).data();
                    acc(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| g * sign(x)).collect()));
                }
                Op::Clamp { src, lo, hi } => {
                    let x = val(*src).data();
                    let data = gd
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                        .collect();
                    acc(*src, like(*src, data));
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                    if nodes[a.0].needs_grad {
                        let yt = transpose_raw(y.data(), k, n);
                        acc(*a, like(*a, matmul_raw(gd, &yt, m, n, k)));
                    }
                    if nodes[b.0].needs_grad {
                        let xt = transpose_raw(x.data(), m, k);
                        acc(*b, like(*b, matmul_raw(&xt, gd, k, m, n)));
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    acc(*a, like(*a, transpose_raw(gd, r, c)));
                }
                Op::Reshape(a) => acc(*a, like(*a, gd.to_vec())),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = val(*p).numel();
                        acc(*p, like(*p, gd[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::SliceRows { src, start } => {
                    let s = val(*src);
                    let row: usize = s.shape()[1..].iter().product();
                    let mut data = vec![0.0; s.numel()];
                    data[start * row..start * row + gd.len()].copy_from_slice(gd);
                    acc(*src, like(*src, data));
                }
                Op::Columns { src, idx } => {
                    let s = val(*src);
                    let (r, c) = (s.shape()[0], s.shape()[1]);
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for (jj, &j) in idx.iter().enumerate() {
                            data[i * c + j] += gd[i * idx.len() + jj];
                        }
                    }
                    acc(*src, like(*src, data));
                }
                Op::BroadcastCols(a) => {
                    let (r, n) = (g.shape()[0], g.shape()[1]);
                    let data = (0..r).map(|i| gd[i * n..(i + 1) * n].iter().sum()).collect();
                    acc(*a, like(*a, data));
                }
                Op::AddColBcast(a, b) => {
                    acc(*a, g.clone());
                    let (r, c) = g.rows_cols();
                    let data = (0..r).map(|i| gd[i * c..(i + 1) * c].iter().sum()).collect();
                    acc(*b, like(*b, data));
                }
                Op::MulRowBcast(a, w) => {
                    let (x, y) = (val(*a).data(), val(*w).data());
                    let (r, c) = g.rows_cols();
                    let mut ga = vec![0.0; r * c];
                    let mut gw = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = gd[i * c + j] * y[j];
                            gw[j] += gd[i * c + j] * x[i * c + j];
                        }
                    }
                    acc(*a, like(*a, ga));
                    acc(*w, like(*w, gw));
                }
                Op::Softmax { src, axis } => {
                    let y = node.value.data();
                    let (outer, n, inner) = strides_for_axis(node.value.shape(), *axis);
                    let mut data = vec![0.0; y.len()];
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + q;
                            let dot: f64 = (0..n).map(|j| y[at(j)] * gd[at(j)]).sum();
                            for j in 0..n {
                                data[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                            }
                        }
                    }
                    acc(*src, like(*src, data));
                }
                Op::Sum(a) => {
                    let n = val(*a).numel();
                    acc(*a, like(*a, vec![gd[0]; n]));
                }
                Op::Mean(a) => {
                    let n = val(*a).numel();
                    acc(*a, like(*a, vec![gd[0] / n as f64; n]));
                }
                Op::Conv2d { x, k, b, geom } => {
                    let (gx, gk, gb) = kernels::conv2d_backward(geom, val(*x).data(), val(*k).data(), gd);
                    acc(*x, like(*x, gx));
                    acc(*k, like(*k, gk));
                    if let Some(b) = b {
                        acc(*b, like(*b, gb));
                    }
                }
                Op::Deconv2d { x, k, b, geom } => {
                    let (gx, gk, gb) = kernels::deconv2d_backward(geom, val(*x).data(), val(*k).data(), gd);
                    acc(*x, like(*x, gx));
                    acc(*k, like(*k, gk));
                    if let Some(b) = b {
                        acc(*b, like(*b, gb));
                    }
                }
                Op::MaxPool2 { src, argmax } => {
                    let mut data = vec![0.0; val(*src).numel()];
                    for (o, &i) in argmax.iter().enumerate() {
                        data[i] += gd[o];
                    }
                    acc(*src, like(*src, data));
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let positions = labels.len();
                    let scale = gd[0] / positions as f64;
                    let mut data: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (p, &y) in labels.iter().enumerate() {
                        data[y * positions + p] -= scale;
                    }
                    acc(*logits, like(*logits, data));
                }
                Op::StraightThrough(a) => acc(*a, g.clone()),
                Op::Custom { op, inputs } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                    let gs = op.backward(&ins, &node.value, &g);
                    for (v, t) in inputs.iter().zip(gs) {
                        acc(*v, t);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
