use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{self, broadcast_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type Pad = (usize, usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Sqrt(Var),
    Rsqrt(Var),
    Recip(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    BroadcastTo(Var),
    SumTo(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    PadAxis(Var, usize, usize),
    Conv2d(Var, Var, Pad),
    Conv2dInputGrad(Var, Var, Pad),
    Conv2dWeightGrad(Var, Var, Pad),
    Upsample2x(Var),
    SumPool2x(Var),
    ZeroInsert2x(Var),
    Subsample2x(Var),
    FlipSwap(Var),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(..) => "abs",
            Op::Sqrt(..) => "sqrt",
            Op::Rsqrt(..) => "rsqrt",
            Op::Recip(..) => "recip",
            Op::Exp(..) => "exp",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::SumTo(..) => "sum_to",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::PadAxis(..) => "pad_axis",
            Op::Conv2d(..) => "conv2d",
            Op::Conv2dInputGrad(..) => "conv2d_input_grad",
            Op::Conv2dWeightGrad(..) => "conv2d_weight_grad",
            Op::Upsample2x(..) => "upsample2x",
            Op::SumPool2x(..) => "sumpool2x",
            Op::ZeroInsert2x(..) => "zero_insert2x",
            Op::Subsample2x(..) => "subsample2x",
            Op::FlipSwap(..) => "flip_swap_kernel",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Matmul(a, b)
            | Op::Conv2d(a, b, _)
            | Op::Conv2dInputGrad(a, b, _)
            | Op::Conv2dWeightGrad(a, b, _) => vec![*a, *b],
            Op::Concat(parts, _) => parts.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Rsqrt(a)
            | Op::Recip(a)
            | Op::Exp(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::LeakyRelu(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::Softmax(a, _)
            | Op::Slice(a, _, _)
            | Op::PadAxis(a, _, _)
            | Op::Upsample2x(a)
            | Op::SumPool2x(a)
            | Op::ZeroInsert2x(a)
            | Op::Subsample2x(a)
            | Op::FlipSwap(a) => vec![*a],
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order. Backward
/// rules are themselves expressed as graph ops, so gradients can be
/// differentiated again.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    kinks: Option<DefaultHasher>,
    pub(crate) fault: Option<&'static str>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            kinks: None,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Hash the sign pattern of every kinked op input from now on.
    pub fn record_kinks(&mut self) {
        self.kinks = Some(DefaultHasher::new());
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(|h| h.finish())
    }

    /// Negates every backward contribution of the named op. Used by negative
    /// controls of the gradient checker.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, op: &'static str) {
        self.fault = Some(op);
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(lit(v)))
    }

    fn hash_signs(&mut self, x: Var) {
        if let Some(h) = self.kinks.as_mut() {
            for &v in self.nodes[x.0].value.data() {
                h.write_i8(if v > T::zero() {
                    1
                } else if v < T::zero() {
                    -1
                } else {
                    0
                });
            }
        }
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Result<Var> {
        let v = self.value(x).map(f);
        self.push(v, op)
    }

    /// Broadcasts both operands to their common shape.
    fn align(&mut self, a: Var, b: Var, op: &'static str) -> Result<(Var, Var)> {
        if self.shape(a) == self.shape(b) {
            return Ok((a, b));
        }
        let shape = broadcast_shape(self.shape(a), self.shape(b))
            .map_err(|_| Error::shape(op, self.shape(a), self.shape(b)))?;
        Ok((self.broadcast_to(a, &shape)?, self.broadcast_to(b, &shape)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let k: T = lit(c);
        self.unary(x, Op::Scale(x, c), |v| v * k)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let k: T = lit(c);
        self.unary(x, Op::AddScalar(x), |v| v + k)
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.hash_signs(x);
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn rsqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Rsqrt(x), |v| v.sqrt().recip())
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Recip(x), |v| v.recip())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sin(x), |v| v.sin())
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Cos(x), |v| v.cos())
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.hash_signs(x);
        let s: T = lit(slope);
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > T::zero() { v } else { v * s })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose2()?;
        self.push(v, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let v = self.value(x).broadcast_to(shape)?;
        self.push(v, Op::BroadcastTo(x))
    }

    /// Reduces by summation to `shape` (the inverse of broadcasting).
    pub fn sum_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let v = self.value(x).sum_to(shape)?;
        self.push(v, Op::SumTo(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.sum_to(x, &[])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it with extent 1 when `keepdim`.
    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Invalid(format!("sum_axis: axis {axis} for {shape:?}")));
        }
        let mut kept = shape.clone();
        kept[axis] = 1;
        let s = self.sum_to(x, &kept)?;
        if keepdim {
            Ok(s)
        } else {
            let mut squeezed = shape;
            squeezed.remove(axis);
            self.reshape(s, &squeezed)
        }
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis, keepdim)?;
        self.scale(s, 1.0 / n)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x).softmax(axis)?;
        self.push(v, Op::Softmax(x, axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&tensors, axis)?;
        self.push(v, Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if start == 0 && self.shape(x).get(axis) == Some(&len) {
            return Ok(x);
        }
        let v = self.value(x).slice_axis(axis, start, len)?;
        self.push(v, Op::Slice(x, axis, start))
    }

    pub fn pad_axis(&mut self, x: Var, axis: usize, start: usize, total: usize) -> Result<Var> {
        let v = self.value(x).pad_axis(axis, start, total)?;
        self.push(v, Op::PadAxis(x, axis, start))
    }

    /// Stride-1 cross-correlation with symmetric zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, pad: (usize, usize)) -> Result<Var> {
        let v = tensor::conv2d(self.value(x), self.value(w), pad)?;
        self.push(v, Op::Conv2d(x, w, pad))
    }

    pub fn conv2d_input_grad(
        &mut self,
        gy: Var,
        w: Var,
        pad: (usize, usize),
        x_shape: &[usize],
    ) -> Result<Var> {
        let v = tensor::conv2d_input_grad(self.value(gy), self.value(w), pad, x_shape)?;
        self.push(v, Op::Conv2dInputGrad(gy, w, pad))
    }

    pub fn conv2d_weight_grad(
        &mut self,
        x: Var,
        gy: Var,
        pad: (usize, usize),
        w_shape: &[usize],
    ) -> Result<Var> {
        let v = tensor::conv2d_weight_grad(self.value(x), self.value(gy), pad, w_shape)?;
        self.push(v, Op::Conv2dWeightGrad(x, gy, pad))
    }

    /// 1-D convolution over the last axis of `x: (n, c, len)` with `w: (o, c, k)`.
    pub fn conv1d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        let x4 = self.reshape(x, &[xs[0], xs[1], 1, xs[2]])?;
        let w4 = self.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
        let y = self.conv2d(x4, w4, (0, pad))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let v = tensor::upsample2x(self.value(x))?;
        self.push(v, Op::Upsample2x(x))
    }

    pub fn sumpool2x(&mut self, x: Var) -> Result<Var> {
        let v = tensor::sumpool2x(self.value(x))?;
        self.push(v, Op::SumPool2x(x))
    }

    pub fn avgpool2x(&mut self, x: Var) -> Result<Var> {
        let s = self.sumpool2x(x)?;
        self.scale(s, 0.25)
    }

    pub fn zero_insert2x(&mut self, x: Var) -> Result<Var> {
        let v = tensor::zero_insert2x(self.value(x))?;
        self.push(v, Op::ZeroInsert2x(x))
    }

    pub fn subsample2x(&mut self, x: Var) -> Result<Var> {
        let v = tensor::subsample2x(self.value(x))?;
        self.push(v, Op::Subsample2x(x))
    }

    pub fn flip_swap_kernel(&mut self, w: Var) -> Result<Var> {
        let v = tensor::flip_swap_kernel(self.value(w))?;
        self.push(v, Op::FlipSwap(w))
    }

    /// Stride-2 transposed convolution, `w: (c_in, c_out, k, k)`, no padding.
    ///
    /// Realised as zero insertion followed by an ordinary convolution with the
    /// flipped, channel-swapped kernel.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 {
            return Err(Error::shape("conv_transpose2d", self.shape(x), &ws));
        }
        let dilated = self.zero_insert2x(x)?;
        let kernel = self.flip_swap_kernel(w)?;
        self.conv2d(dilated, kernel, (ws[2] - 1, ws[3] - 1))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    pub(crate) fn sign_tensor(&self, x: Var) -> Tensor<T> {
        self.value(x).map(sign)
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    // max(v, 0) + ln(1 + e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
