//! Toy Fréchet metric and diagnostics over a trained model.
//!
//! The Fréchet distance here is computed over a fixed seeded random
//! projection, not a pretrained video network. Values are only comparable
//! between models evaluated with the same embed seed and frame count.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypernet::lowrank_reconstruct_graph;
use crate::motion::{sample_motion_noise, MotionNoiseTrack};
use crate::networks::{Generator, VideoClip};
use crate::params::{ParamStore, Session};
use crate::scalar::Scalar;
use crate::synthetic::SceneSpec;
use crate::tensor::Tensor;

/// Width of the projected per-frame feature.
pub const EMBED_DIM: usize = 64;
pub const DEFAULT_EMBED_SEED: u64 = 0x5eed_f00d;

/// Worker pool sized by `MSGV_THREADS` (default 1).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var("MSGV_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("MSGV_THREADS must be a positive integer, got `{v}`")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

/// Seeded projection with orthonormal columns, `(pixels, EMBED_DIM)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub pixels: usize,
    pub seed: u64,
    q: Vec<f64>,
}

impl Embedder {
    pub fn new(pixels: usize, seed: u64) -> Result<Self> {
        if pixels < EMBED_DIM {
            return Err(Error::Invalid(format!("need at least {EMBED_DIM} pixels, got {pixels}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // column-major while orthonormalizing
        let mut cols: Vec<Vec<f64>> = (0..EMBED_DIM)
            .map(|_| (0..pixels).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        for j in 0..EMBED_DIM {
            let (done, rest) = cols.split_at_mut(j);
            let v = &mut rest[0];
            for u in done.iter() {
                let d: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, &y)| *x -= d * y);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
        }
        let mut q = vec![0.0; pixels * EMBED_DIM];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                q[i * EMBED_DIM + j] = v;
            }
        }
        Ok(Embedder { pixels, seed, q })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.q
    }

    fn project(&self, frame: &[f64]) -> [f64; EMBED_DIM] {
        let mut out = [0.0; EMBED_DIM];
        for (i, &x) in frame.iter().enumerate() {
            let row = &self.q[i * EMBED_DIM..(i + 1) * EMBED_DIM];
            out.iter_mut().zip(row).for_each(|(o, &r)| *o += x * r);
        }
        out
    }

    /// `[mean projection, mean of differences, std of differences]` over the
    /// first `n_frames` frames, `3·EMBED_DIM` values.
    pub fn embed<T: Scalar>(&self, clip: &VideoClip<T>, n_frames: usize) -> Result<Vec<f64>> {
        if n_frames < 2 || clip.len() < n_frames {
            return Err(Error::Invalid(format!(
                "embedding needs 2 ≤ n_frames ≤ clip length, got {n_frames} of {}",
                clip.len()
            )));
        }
        let per = clip.frames.len() / clip.len();
        if per != self.pixels {
            return Err(Error::shape("embed", clip.frames.shape(), &[self.pixels]));
        }
        let data = clip.frames.to_f64_vec();
        let proj: Vec<[f64; EMBED_DIM]> = (0..n_frames).map(|i| self.project(&data[i * per..(i + 1) * per])).collect();
        let nd = (n_frames - 1) as f64;
        let mut out = vec![0.0; 3 * EMBED_DIM];
        for j in 0..EMBED_DIM {
            out[j] = proj.iter().map(|p| p[j]).sum::<f64>() / n_frames as f64;
            let diffs: Vec<f64> = proj.windows(2).map(|w| w[1][j] - w[0][j]).collect();
            let mean = diffs.iter().sum::<f64>() / nd;
            let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / nd;
            out[EMBED_DIM + j] = mean;
            out[2 * EMBED_DIM + j] = var.sqrt();
        }
        Ok(out)
    }

    pub fn embed_all<T: Scalar>(&self, clips: &[VideoClip<T>], n_frames: usize) -> Result<Vec<Vec<f64>>> {
        worker_pool()?.install(|| clips.par_iter().map(|c| self.embed(c, n_frames)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Sample mean and unbiased covariance.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Invalid(format!("gaussian stats need at least 2 samples, got {n}")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Invalid("feature vectors differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(FeatureStats { mean, cov, count: n })
}

/// Eigenvalues of a symmetrized matrix with negatives and round-off-sized
/// values (below `λ_max·d·ε`) set to 0.
fn clamped_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cut = top * m.nrows() as f64 * f64::EPSILON;
    eig.eigenvalues.iter_mut().for_each(|l| {
        if *l <= cut {
            *l = 0.0
        }
    });
    eig
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m);
    let s = eig.eigenvalues.map(f64::sqrt);
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2})`.
///
/// The cross term uses `Tr((√Σa Σb √Σa)^{1/2})`, which equals the trace of
/// `(ΣaΣb)^{1/2}` and keeps every factor symmetric.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() || a.cov.shape() != b.cov.shape() {
        return Err(Error::shape("frechet_distance", &[a.mean.len()], &[b.mean.len()]));
    }
    let sa = psd_sqrt(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let cross: f64 = clamped_eigen(&inner).eigenvalues.iter().map(|l| l.sqrt()).sum();
    let dm = (&a.mean - &b.mean).norm_squared();
    let fd = dm + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if fd.is_finite() {
        Ok(fd)
    } else {
        Err(Error::NonFinite {
            op: "frechet_distance".into(),
        })
    }
}

/// Content noise and motion track for evaluation sample `index` under `seed`.
pub fn eval_latents<T: Scalar>(gen: &Generator, seed: u64, index: u64, t_max: f64) -> Result<(Tensor<T>, MotionNoiseTrack)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let d_c = gen.cfg.style.d_c;
    let z: Vec<f64> = (0..d_c).map(|_| rng.sample(StandardNormal)).collect();
    let m = &gen.cfg.motion;
    let track = sample_motion_noise(
        rng.random(),
        m.track_anchors(t_max),
        m.d_z,
        m.anchor_spacing,
    )?;
    Ok((Tensor::from_f64(&[1, d_c], &z)?, track))
}

/// `count` generated clips at frame times `0..n_frames`.
pub fn generate_clips<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    count: usize,
    n_frames: usize,
    seed: u64,
) -> Result<Vec<VideoClip<T>>> {
    let times: Vec<f64> = (0..n_frames).map(|i| i as f64).collect();
    let t_max = times.last().copied().unwrap_or(0.0);
    worker_pool()?.install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let (z, track) = eval_latents::<T>(gen, seed, i as u64, t_max)?;
                gen.sample(store, &z, &track, &times)
            })
            .collect()
    })
}

/// The first `count` scenes rendered at frame times `0..n_frames`.
pub fn real_clips<T: Scalar>(scenes: &[SceneSpec], count: usize, n_frames: usize) -> Result<Vec<VideoClip<T>>> {
    if scenes.len() < count {
        return Err(Error::Invalid(format!("need {count} scenes, dataset has {}", scenes.len())));
    }
    let times: Vec<f64> = (0..n_frames).map(|i| i as f64).collect();
    worker_pool()?.install(|| scenes[..count].par_iter().map(|s| s.render_clip(&times)).collect())
}

/// Toy Fréchet distance between two clip sets.
pub fn clip_frechet<T: Scalar>(a: &[VideoClip<T>], b: &[VideoClip<T>], n_frames: usize, embed_seed: u64) -> Result<f64> {
    let first = a.first().ok_or_else(|| Error::Invalid("empty clip set".into()))?;
    let emb = Embedder::new(first.frames.len() / first.len(), embed_seed)?;
    let fa = gaussian_stats(&emb.embed_all(a, n_frames)?)?;
    let fb = gaussian_stats(&emb.embed_all(b, n_frames)?)?;
    frechet_distance(&fa, &fb)
}

/// Pairwise cosine similarity of the rows of `rows: (K, D)`.
///
/// A zero-norm row gets similarity 0 with everything, itself included.
pub fn cosine_matrix(rows: &Tensor<f64>) -> Result<Vec<Vec<f64>>> {
    if rows.rank() != 2 {
        return Err(Error::Invalid(format!("cosine_matrix expects (K, D), got {:?}", rows.shape())));
    }
    let (k, d) = (rows.shape()[0], rows.shape()[1]);
    let r = |i: usize| &rows.data()[i * d..(i + 1) * d];
    let norms: Vec<f64> = (0..k).map(|i| r(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if norms.contains(&0.0) {
        log::warn!("zero-norm style vector; its cosine entries are set to 0");
    }
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if norms[i] == 0.0 || norms[j] == 0.0 {
                        0.0
                    } else if i == j {
                        1.0
                    } else {
                        r(i).iter().zip(r(j)).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j])
                    }
                })
                .collect()
        })
        .collect())
}

/// Reconstructed motion styles `(K, c_in·kh·kw)` of `layer` at time `t`.
pub fn motion_style_tensor<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    z_c: &Tensor<T>,
    track: &MotionNoiseTrack,
    t: f64,
    layer: usize,
) -> Result<Tensor<T>> {
    let shape = gen.styles.layer(layer)?;
    let mut s = Session::frozen(store);
    let z = s.graph.constant(z_c.clone());
    let st = gen.motion_styles(&mut s, z, track, t, layer)?;
    let m = lowrank_reconstruct_graph(&mut s.graph, st, shape)?;
    Ok(s.graph.value(m).clone())
}

pub fn motion_style_cosine<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    z_c: &Tensor<T>,
    track: &MotionNoiseTrack,
    t: f64,
    layer: usize,
) -> Result<Vec<Vec<f64>>> {
    cosine_matrix(&motion_style_tensor(gen, store, z_c, track, t, layer)?.cast())
}

/// Mean absolute off-diagonal entry; 0 for a 1×1 matrix.
pub fn mean_abs_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    if k < 2 {
        return 0.0;
    }
    let s: f64 = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j].abs()).sum();
    s / (k * (k - 1)) as f64
}

/// Per time, `softmax(A_t)` over styles averaged over output channels: `T×K`.
pub fn attention_trajectory<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    z_c: &Tensor<T>,
    track: &MotionNoiseTrack,
    times: &[f64],
    layer: usize,
) -> Result<Vec<Vec<f64>>> {
    gen.styles.layer(layer)?;
    let mut s = Session::frozen(store);
    let z = s.graph.constant(z_c.clone());
    let out = gen.generate(&mut s, z, track, times)?;
    out.records
        .iter()
        .map(|frame| {
            let a = s.graph.value(frame[layer].logits).cast::<f64>().softmax(1)?;
            let (c_out, k) = (a.shape()[0], a.shape()[1]);
            Ok((0..k)
                .map(|j| (0..c_out).map(|o| a.data()[o * k + j]).sum::<f64>() / c_out as f64)
                .collect())
        })
        .collect()
}

/// `map[k] = Σ_o softmax(A)[o, k] · F[o]` for `a: (c_out, K)`, `f: (c_out, H, W)`.
pub fn attention_map<T: Scalar>(a: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || f.rank() != 3 || a.shape()[0] != f.shape()[0] {
        return Err(Error::shape("attention_map", a.shape(), f.shape()));
    }
    let (c_out, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let p = a.softmax(1)?.transpose2()?;
    p.matmul(&f.reshape(&[c_out, h * w])?)?.reshape(&[a.shape()[1], h, w])
}

/// Attention maps `(K, H, W)` of `layer` at time `t`.
pub fn attention_maps_at<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    z_c: &Tensor<T>,
    track: &MotionNoiseTrack,
    t: f64,
    layer: usize,
) -> Result<Tensor<T>> {
    gen.styles.layer(layer)?;
    let mut s = Session::frozen(store);
    let z = s.graph.constant(z_c.clone());
    let out = gen.generate(&mut s, z, track, &[t])?;
    let r = out.records[0][layer];
    let f = s.graph.value(r.features);
    let f = f.reshape(&f.shape()[f.rank() - 3..])?;
    attention_map(s.graph.value(r.logits), &f)
}

/// `grid[i][j]` is content `j` driven by track `i`.
pub fn decomposition_grid<T: Scalar>(
    gen: &Generator,
    store: &ParamStore<T>,
    contents: &[Tensor<T>],
    tracks: &[MotionNoiseTrack],
    times: &[f64],
) -> Result<Vec<Vec<VideoClip<T>>>> {
    if contents.is_empty() || tracks.is_empty() {
        return Err(Error::Invalid("decomposition grid needs contents and tracks".into()));
    }
    let cells: Vec<(usize, usize)> = (0..tracks.len())
        .flat_map(|i| (0..contents.len()).map(move |j| (i, j)))
        .collect();
    let clips: Vec<VideoClip<T>> = worker_pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(i, j)| gen.sample(store, &contents[j], &tracks[i], times))
            .collect::<Result<_>>()
    })?;
    let mut it = clips.into_iter();
    Ok((0..tracks.len()).map(|_| it.by_ref().take(contents.len()).collect()).collect())
}
