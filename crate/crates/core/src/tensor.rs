//! Dense row-major tensors and the numeric kernels behind every graph op.
//!
//! Kernels here are plain functions over values; differentiation lives in
//! [`crate::autodiff`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b` (right-aligned, numpy rules).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// Strides of `small` laid over the index space of `big` (0 on broadcast axes).
fn broadcast_strides(small: &[usize], big: &[usize]) -> Result<Vec<usize>> {
    if small.len() > big.len() {
        return Err(Error::shape("broadcast_to", small, big));
    }
    let off = big.len() - small.len();
    let st = strides(small);
    let mut out = vec![0; big.len()];
    for i in 0..small.len() {
        if small[i] == big[i + off] {
            out[i + off] = st[i];
        } else if small[i] != 1 {
            return Err(Error::shape("broadcast_to", small, big));
        }
    }
    Ok(out)
}

/// Calls `f(big_flat, small_flat)` for every element of `big`.
fn for_each_broadcast(big: &[usize], bstrides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(big);
    if n == 0 {
        return;
    }
    let rank = big.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = big[rank - 1];
    let inner_stride = bstrides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut flat = 0usize;
    loop {
        let mut s = base;
        for _ in 0..inner {
            f(flat, s);
            flat += 1;
            s += inner_stride;
        }
        // advance outer index
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            base += bstrides[d];
            if idx[d] < big[d] {
                break;
            }
            base -= bstrides[d] * big[d];
            idx[d] = 0;
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::Invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| lit(v)).collect())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = rng.sample(StandardNormal);
            lit(z * std)
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    #[allow(clippy::eq_op)]
    pub fn all_finite(&self) -> bool {
        // x - x is 0 for finite x and NaN otherwise; branch-free lanes vectorize
        let mut acc = [T::zero(); 8];
        let mut chunks = self.data.chunks_exact(8);
        for c in &mut chunks {
            for l in 0..8 {
                acc[l] += c[l] - c[l];
            }
        }
        let tail: T = chunks.remainder().iter().map(|&v| v - v).sum();
        (acc.iter().copied().sum::<T>() + tail).is_finite()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise binary op with numpy broadcasting.
    pub fn broadcast_zip(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        if self.shape == other.shape {
            return self.zip_map(other, op, f);
        }
        let shape = broadcast_shape(&self.shape, &other.shape)
            .map_err(|_| Error::shape(op, &self.shape, &other.shape))?;
        let a = self.broadcast_to(&shape)?;
        let b = other.broadcast_to(&shape)?;
        a.zip_map(&b, op, f)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let bs = broadcast_strides(&self.shape, shape)?;
        let mut data = vec![T::zero(); numel(shape)];
        for_each_broadcast(shape, &bs, |i, j| data[i] = self.data[j]);
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sums over the axes that broadcasting `shape` to `self.shape` would expand.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let bs = broadcast_strides(shape, &self.shape)
            .map_err(|_| Error::shape("sum_to", &self.shape, shape))?;
        let mut data = vec![T::zero(); numel(shape)];
        for_each_broadcast(&self.shape, &bs, |i, j| data[j] += self.data[i]);
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// View as (outer, axis, inner) around `axis`.
    fn split_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let n = self.shape[axis];
        let inner = numel(&self.shape[axis + 1..]);
        (outer, n, inner)
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Invalid(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.check_axis(axis, "softmax")?;
        let (outer, n, inner) = self.split_axis(axis);
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..n {
                    m = m.max(self.data[at(k)]);
                }
                let mut z = T::zero();
                for k in 0..n {
                    let e = (self.data[at(k)] - m).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] = out[at(k)] / z;
                }
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn slice_axis(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.check_axis(axis, "slice")?;
        if len == 0 || start + len > self.shape[axis] {
            return Err(Error::Invalid(format!(
                "slice [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let (outer, n, inner) = self.split_axis(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Places `self` at offset `start` of a zero tensor whose `axis` has extent `total`.
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Result<Self> {
        self.check_axis(axis, "pad")?;
        let (outer, n, inner) = self.split_axis(axis);
        if start + n > total {
            return Err(Error::Invalid(format!(
                "pad: {n} values at {start} exceed extent {total}"
            )));
        }
        let mut shape = self.shape.clone();
        shape[axis] = total;
        let mut data = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let src = o * n * inner;
            let dst = o * total * inner + start * inner;
            data[dst..dst + n * inner].copy_from_slice(&self.data[src..src + n * inner]);
        }
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        first.check_axis(axis, "concat")?;
        let mut total = 0;
        for p in parts {
            let same = p.rank() == first.rank()
                && p
                    .shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
            total += p.shape[axis];
        }
        let (outer, _, inner) = first.split_axis(axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis];
                let base = o * n * inner;
                data.extend_from_slice(&p.data[base..base + n * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Tensor { shape, data })
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::Invalid(format!(
                "transpose expects a matrix, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, false, b, false, c);
}

/// `c += aᵀ · b` for row-major `a: k×m`, `b: k×n`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, true, b, false, c);
}

/// `c += a · bᵀ` for row-major `a: m×k`, `b: n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(m, k, n, a, false, b, true, c);
}

/// Dot product with eight fixed accumulation lanes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Geometry of a stride-1 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    /// Output columns `lo..hi` whose tap `kj` lands inside the unpadded row.
    fn valid_cols(&self, kj: usize, ow: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(kj).min(ow);
        let hi = (self.w + self.pw).saturating_sub(kj).clamp(lo, ow);
        (lo, hi)
    }

    pub fn new(x: &[usize], w: &[usize], pad: (usize, usize)) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::shape("conv2d", x, w));
        }
        let g = ConvGeom {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: w[0],
            kh: w[2],
            kw: w[3],
            ph: pad.0,
            pw: pad.1,
        };
        if g.h + 2 * g.ph < g.kh || g.w + 2 * g.pw < g.kw {
            return Err(Error::shape("conv2d", x, w));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        self.h + 2 * self.ph + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pw + 1 - self.kw
    }

    pub fn x_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn w_shape(&self) -> [usize; 4] {
        [self.o, self.c, self.kh, self.kw]
    }

    pub fn y_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.out_h(), self.out_w()]
    }

    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn hw_out(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one image (c,h,w) into columns (c·kh·kw, oh·ow).
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut row = 0;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = y + ki;
                    let drow = &mut dst[y * ow..(y + 1) * ow];
                    if iy < g.ph || iy >= g.h + g.ph {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &x[c * g.h * g.w + (iy - g.ph) * g.w..][..g.w];
                    let (lo, hi) = g.valid_cols(kj, ow);
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    drow[lo..hi].copy_from_slice(&src[lo + kj - g.pw..hi + kj - g.pw]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into an image, accumulating.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut row = 0;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = y + ki;
                    if iy < g.ph || iy >= g.h + g.ph {
                        continue;
                    }
                    let base = c * g.h * g.w + (iy - g.ph) * g.w;
                    let (lo, hi) = g.valid_cols(kj, ow);
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut x[base + lo + kj - g.pw..base + hi + kj - g.pw];
                    for (d, &v) in dst.iter_mut().zip(&src[y * ow + lo..y * ow + hi]) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 cross-correlation, `x: (n,c,h,w)`, `w: (o,c,kh,kw)`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, pad: (usize, usize)) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), pad)?;
    let (ckk, hw) = (g.ckk(), g.hw_out());
    let mut cols = vec![T::zero(); ckk * hw];
    let mut out = vec![T::zero(); g.n * g.o * hw];
    let img = g.c * g.h * g.w;
    for b in 0..g.n {
        im2col(&g, &x.data[b * img..(b + 1) * img], &mut cols);
        gemm_nn(g.o, ckk, hw, &w.data, &cols, &mut out[b * g.o * hw..(b + 1) * g.o * hw]);
    }
    Tensor::new(g.y_shape().to_vec(), out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    pad: (usize, usize),
    x_shape: &[usize],
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x_shape, w.shape(), pad)?;
    if gy.shape() != g.y_shape() {
        return Err(Error::shape("conv2d_input_grad", gy.shape(), &g.y_shape()));
    }
    let (ckk, hw) = (g.ckk(), g.hw_out());
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); ckk * hw];
    let mut gx = vec![T::zero(); g.n * img];
    for b in 0..g.n {
        cols.fill(T::zero());
        gemm_tn(ckk, g.o, hw, &w.data, &gy.data[b * g.o * hw..(b + 1) * g.o * hw], &mut cols);
        col2im(&g, &cols, &mut gx[b * img..(b + 1) * img]);
    }
    Tensor::new(x_shape.to_vec(), gx)
}

/// Gradient of [`conv2d`] with respect to its weights.
pub fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    pad: (usize, usize),
    w_shape: &[usize],
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w_shape, pad)?;
    if gy.shape() != g.y_shape() {
        return Err(Error::shape("conv2d_weight_grad", gy.shape(), &g.y_shape()));
    }
    let (ckk, hw) = (g.ckk(), g.hw_out());
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); ckk * hw];
    let mut gw = vec![T::zero(); g.o * ckk];
    for b in 0..g.n {
        im2col(&g, &x.data[b * img..(b + 1) * img], &mut cols);
        gemm_nt(g.o, hw, ckk, &gy.data[b * g.o * hw..(b + 1) * g.o * hw], &cols, &mut gw);
    }
    Tensor::new(w_shape.to_vec(), gw)
}

fn check_nchw<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::Invalid(format!("{op} expects (n,c,h,w), got {:?}", x.shape()))),
    }
}

/// Nearest-neighbour 2× upsampling of `(n,c,h,w)`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = check_nchw(x, "upsample2x")?;
    let mut out = vec![T::zero(); n * c * h * w * 4];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w * 4..(p + 1) * h * w * 4];
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

/// Sum over non-overlapping 2×2 windows; adjoint of [`upsample2x`].
pub fn sumpool2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = check_nchw(x, "sumpool2x")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Invalid(format!("sumpool2x needs even extents, got {:?}", x.shape())));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / 2) * ow + xx / 2] += src[y * w + xx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Inserts a zero between neighbouring pixels: `(h,w) -> (2h-1, 2w-1)`.
pub fn zero_insert2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = check_nchw(x, "zero_insert2x")?;
    let (oh, ow) = (2 * h - 1, 2 * w - 1);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                out[p * oh * ow + 2 * y * ow + 2 * xx] = x.data[p * h * w + y * w + xx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Keeps even-indexed pixels; adjoint of [`zero_insert2x`].
pub fn subsample2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = check_nchw(x, "subsample2x")?;
    if h % 2 == 0 || w % 2 == 0 {
        return Err(Error::Invalid(format!("subsample2x needs odd extents, got {:?}", x.shape())));
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                out[p * oh * ow + y * ow + xx] = x.data[p * h * w + 2 * y * w + 2 * xx];
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// `(a,b,kh,kw) -> (b,a,kh,kw)` with both spatial axes reversed. Self-adjoint.
pub fn flip_swap_kernel<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let [a, b, kh, kw] = check_nchw(w, "flip_swap_kernel")?;
    let mut out = vec![T::zero(); w.len()];
    for i in 0..a {
        for j in 0..b {
            for y in 0..kh {
                for x in 0..kw {
                    out[((j * a + i) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                        w.data[((i * b + j) * kh + y) * kw + x];
                }
            }
        }
    }
    Tensor::new(vec![b, a, kh, kw], out)
}
