//! Parameter counts and wall time of the low-rank hypernetwork head
//! against a full-rank head that emits whole filters.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::hypernet::{hyper_param_count, lowrank_reconstruct, LayerShape};
use crate::modconv::mostatt;
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, Tensor};

/// Columns of the full-rank head materialised at once.
///
/// The emulation streams one `d_h × FULL_BLOCK` block over every output
/// column, so the ~1.2 GB head never has to exist. Reusing a cache-warm
/// block can only make the full-rank path look faster.
pub const FULL_BLOCK: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub reps: usize,
}

impl Timing {
    fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Timing {
            mean_ms: mean,
            std_ms: var.sqrt(),
            reps: ms.len(),
        }
    }
}

impl fmt::Display for Timing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3} ms over {} reps", self.mean_ms, self.std_ms, self.reps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub shape: LayerShape,
    pub d_h: usize,
    pub rank: usize,
    pub k: usize,
    pub lowrank_params: u64,
    pub fullrank_params: u64,
    pub lowrank: Timing,
    pub fullrank: Timing,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.shape;
        writeln!(
            f,
            "layer {},{},{},{}  d_h={}  rank={}  K={}",
            s.c_out, s.c_in, s.kh, s.kw, self.d_h, self.rank, self.k
        )?;
        writeln!(f, "lowrank params:  {}", self.lowrank_params)?;
        writeln!(f, "fullrank params: {}", self.fullrank_params)?;
        writeln!(f, "lowrank time:    {}", self.lowrank)?;
        write!(f, "fullrank time:   {}", self.fullrank)
    }
}

fn time_reps(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    f()?;
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(Timing::from_samples(&ms))
}

/// Low-rank path: head output, rank-R reconstruction of all K styles, attention.
fn lowrank_path<T: Scalar>(shape: LayerShape, h: &Tensor<T>, head: &Tensor<T>, w: &Tensor<T>, rank: usize) -> Result<T> {
    let k = h.shape()[0];
    let l = shape.style_len();
    let styles = h.matmul(head)?;
    let d = shape.fan_in();
    let mut m = Vec::with_capacity(k * d);
    for i in 0..k {
        let st = styles.slice_axis(0, i, 1)?.reshape(&[rank, l])?;
        m.extend_from_slice(lowrank_reconstruct(&st, shape.c_in, shape.kh, shape.kw)?.data());
    }
    let mut g = Graph::new();
    let wv = g.constant(w.clone());
    let mv = g.constant(Tensor::new(vec![k, d], m)?);
    let (_, s) = mostatt(&mut g, wv, mv)?;
    Ok(g.value(s).data()[0])
}

/// Full-rank path: the head emits every filter entry for each of the K styles.
fn fullrank_path<T: Scalar>(h: &Tensor<T>, block: &Tensor<T>, cols: usize) -> Result<T> {
    let (k, d_h) = (h.shape()[0], h.shape()[1]);
    let mut out = vec![T::zero(); k * cols];
    let mut tmp = vec![T::zero(); k * FULL_BLOCK];
    let mut start = 0;
    while start < cols {
        let n = FULL_BLOCK.min(cols - start);
        tmp[..k * n].iter_mut().for_each(|x| *x = T::zero());
        if n == FULL_BLOCK {
            gemm_nn(k, d_h, n, h.data(), block.data(), &mut tmp);
        } else {
            let sub: Vec<T> = (0..d_h)
                .flat_map(|r| block.data()[r * FULL_BLOCK..r * FULL_BLOCK + n].iter().copied())
                .collect();
            gemm_nn(k, d_h, n, h.data(), &sub, &mut tmp);
        }
        for i in 0..k {
            out[i * cols + start..i * cols + start + n].copy_from_slice(&tmp[i * n..(i + 1) * n]);
        }
        start += n;
    }
    Ok(out[0])
}

/// Counts parameters and times both heads at `shape` for `k` styles.
pub fn run<T: Scalar>(shape: LayerShape, d_h: usize, rank: usize, k: usize, reps: usize) -> Result<BenchReport> {
    if [shape.c_out, shape.c_in, shape.kh, shape.kw, d_h, rank, k, reps].contains(&0) {
        return Err(Error::Config("bench dimensions, rank, K and reps must be positive".into()));
    }
    let (lowrank_params, fullrank_params) = hyper_param_count(shape, d_h, rank);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = Tensor::<T>::randn(&[k, d_h], 1.0, &mut rng);
    let head = Tensor::<T>::randn(&[d_h, rank * shape.style_len()], 0.01, &mut rng);
    let w = Tensor::<T>::randn(&shape.filter_shape(), 1.0, &mut rng);
    let block = Tensor::<T>::randn(&[d_h, FULL_BLOCK], 0.01, &mut rng);
    let cols = shape.c_out * shape.fan_in();
    let lowrank = time_reps(reps, || lowrank_path(shape, &h, &head, &w, rank).map(|_| ()))?;
    let fullrank = time_reps(reps, || fullrank_path(&h, &block, cols).map(|_| ()))?;
    Ok(BenchReport {
        shape,
        d_h,
        rank,
        k,
        lowrank_params,
        fullrank_params,
        lowrank,
        fullrank,
    })
}
