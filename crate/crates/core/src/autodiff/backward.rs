use std::collections::HashMap;

use super::graph::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Scalar> Graph<T> {
    /// Vector-Jacobian products of node `i` given its upstream gradient `g`,
    /// one entry per input that requires a gradient.
    fn vjp(&mut self, i: usize, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[i].op.clone();
        let name = op.name();
        let y = Var(i);
        let rg = |s: &Self, v: Var| s.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(self, a) {
                    out.push((a, g));
                }
                if rg(self, b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if rg(self, a) {
                    out.push((a, g));
                }
                if rg(self, b) {
                    out.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if rg(self, a) {
                    out.push((a, self.mul(g, b)?));
                }
                if rg(self, b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c)?)),
            Op::AddScalar(a) => out.push((a, g)),
            Op::Abs(a) => {
                let s = self.sign_tensor(a);
                let s = self.constant(s);
                out.push((a, self.mul(g, s)?));
            }
            Op::Sqrt(a) => {
                // d/dx sqrt(x) = 1 / (2 y)
                let r = self.recip(y)?;
                let r = self.scale(r, 0.5)?;
                out.push((a, self.mul(g, r)?));
            }
            Op::Rsqrt(a) => {
                // d/dx x^{-1/2} = -y^3 / 2
                let y2 = self.mul(y, y)?;
                let y3 = self.mul(y2, y)?;
                let d = self.scale(y3, -0.5)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Recip(a) => {
                let y2 = self.mul(y, y)?;
                let d = self.neg(y2)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Exp(a) => out.push((a, self.mul(g, y)?)),
            Op::Sin(a) => {
                let c = self.cos(a)?;
                out.push((a, self.mul(g, c)?));
            }
            Op::Cos(a) => {
                let s = self.sin(a)?;
                let s = self.neg(s)?;
                out.push((a, self.mul(g, s)?));
            }
            Op::Tanh(a) => {
                let y2 = self.mul(y, y)?;
                let d = self.scale(y2, -1.0)?;
                let d = self.add_scalar(d, 1.0)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Sigmoid(a) => {
                let one_minus = self.scale(y, -1.0)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(y, one_minus)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a)?;
                out.push((a, self.mul(g, s)?));
            }
            Op::LeakyRelu(a, slope) => {
                let s: T = lit(slope);
                let mask = self.value(a).map(|v| if v > T::zero() { T::one() } else { s });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)?));
            }
            Op::Matmul(a, b) => {
                if rg(self, a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if rg(self, b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape(g, &shape)?));
            }
            Op::BroadcastTo(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.sum_to(g, &shape)?));
            }
            Op::SumTo(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.broadcast_to(g, &shape)?));
            }
            Op::Softmax(a, axis) => {
                // y ⊙ (g − Σ_axis y ⊙ g)
                let gy = self.mul(g, y)?;
                let s = self.sum_axis(gy, axis, true)?;
                let centered = self.sub(g, s)?;
                out.push((a, self.mul(y, centered)?));
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let n = self.shape(p)[axis];
                    if rg(self, p) {
                        out.push((p, self.slice(g, axis, start, n)?));
                    }
                    start += n;
                }
            }
            Op::Slice(a, axis, start) => {
                let total = self.shape(a)[axis];
                out.push((a, self.pad_axis(g, axis, start, total)?));
            }
            Op::PadAxis(a, axis, start) => {
                let n = self.shape(a)[axis];
                out.push((a, self.slice(g, axis, start, n)?));
            }
            Op::Conv2d(x, w, pad) => {
                if rg(self, x) {
                    let xs = self.shape(x).to_vec();
                    out.push((x, self.conv2d_input_grad(g, w, pad, &xs)?));
                }
                if rg(self, w) {
                    let ws = self.shape(w).to_vec();
                    out.push((w, self.conv2d_weight_grad(x, g, pad, &ws)?));
                }
            }
            Op::Conv2dInputGrad(gy, w, pad) => {
                if rg(self, gy) {
                    out.push((gy, self.conv2d(g, w, pad)?));
                }
                if rg(self, w) {
                    let ws = self.shape(w).to_vec();
                    out.push((w, self.conv2d_weight_grad(g, gy, pad, &ws)?));
                }
            }
            Op::Conv2dWeightGrad(x, gy, pad) => {
                if rg(self, x) {
                    let xs = self.shape(x).to_vec();
                    out.push((x, self.conv2d_input_grad(gy, g, pad, &xs)?));
                }
                if rg(self, gy) {
                    out.push((gy, self.conv2d(x, g, pad)?));
                }
            }
            Op::Upsample2x(a) => out.push((a, self.sumpool2x(g)?)),
            Op::SumPool2x(a) => out.push((a, self.upsample2x(g)?)),
            Op::ZeroInsert2x(a) => out.push((a, self.subsample2x(g)?)),
            Op::Subsample2x(a) => out.push((a, self.zero_insert2x(g)?)),
            Op::FlipSwap(a) => out.push((a, self.flip_swap_kernel(g)?)),
        }
        if self.fault == Some(name) {
            for entry in out.iter_mut() {
                entry.1 = self.neg(entry.1)?;
            }
        }
        Ok(out)
    }

    /// Gradients of scalar `loss` with respect to `wrt`, as new graph nodes.
    ///
    /// The returned nodes are ordinary graph values, so a function of them can
    /// be differentiated again (used by the R1 penalty). Inputs that `loss`
    /// does not depend on get a zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        let seed = Tensor::ones(self.shape(loss));
        grads[loss.0] = Some(self.constant(seed));
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            for (input, gi) in self.vjp(i, g)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => gi,
                    Some(prev) => self.add(prev, gi)?,
                });
            }
        }
        wrt.iter()
            .map(|&v| match grads.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let z = Tensor::zeros(self.shape(v));
                    Ok(self.constant(z))
                }
            })
            .collect()
    }

    /// Gradients of `loss` for every differentiable leaf it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| self.nodes[i].requires_grad && matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect();
        let gvars = self.grad(loss, &leaves)?;
        let grads = leaves
            .into_iter()
            .zip(gvars)
            .map(|(l, g)| (l, self.value(g).clone()))
            .collect();
        Ok(Gradients { grads })
    }
}
