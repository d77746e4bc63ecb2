//! Continuous-time motion codes.
//!
//! A track of standard-normal anchors is mixed along time by a 1-D conv
//! stack, an affine head turns every anchor feature into a bank of sinusoid
//! parameters (amplitude, angular frequency, phase), and the code at time `t`
//! evaluates the bank with parameters interpolated linearly between the two
//! anchors around `t`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{Linear, LRELU_SLOPE};
use crate::params::{Group, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    pub d_z: usize,
    /// Number of sinusoids, which is also the motion code width.
    pub waves: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub anchor_spacing: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            d_z: 16,
            waves: 16,
            conv_layers: 2,
            kernel: 11,
            anchor_spacing: 16.0,
        }
    }
}

impl MotionConfig {
    /// Anchors for `[0, t_max]` plus the temporal receptive field, so that
    /// codes at `t ≤ t_max` do not depend on how long the track is.
    pub fn track_anchors(&self, t_max: f64) -> usize {
        MotionNoiseTrack::anchors_for(t_max, self.anchor_spacing) + self.conv_layers * (self.kernel / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionNoiseTrack {
    /// `(num_anchors, d_z)` standard-normal samples.
    pub anchors: Tensor<f64>,
    pub anchor_spacing: f64,
    pub seed: u64,
}

impl MotionNoiseTrack {
    pub fn num_anchors(&self) -> usize {
        self.anchors.shape()[0]
    }

    pub fn d_z(&self) -> usize {
        self.anchors.shape()[1]
    }

    /// Time covered before parameters are held constant.
    pub fn span(&self) -> f64 {
        (self.num_anchors() - 1) as f64 * self.anchor_spacing
    }

    /// Anchors needed so that `[0, t_max]` lies within the track.
    pub fn anchors_for(t_max: f64, spacing: f64) -> usize {
        ((t_max.max(0.0) / spacing).floor() as usize + 2).max(2)
    }
}

pub fn sample_motion_noise(
    seed: u64,
    num_anchors: usize,
    d_z: usize,
    anchor_spacing: f64,
) -> Result<MotionNoiseTrack> {
    if num_anchors < 2 {
        return Err(Error::Invalid(format!("motion track needs at least 2 anchors, got {num_anchors}")));
    }
    if !(anchor_spacing > 0.0) || !anchor_spacing.is_finite() {
        return Err(Error::Invalid(format!("anchor spacing must be positive, got {anchor_spacing}")));
    }
    if d_z == 0 {
        return Err(Error::Invalid("d_z must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = Tensor::from_fn(&[num_anchors, d_z], |_| rng.sample::<f64, _>(StandardNormal));
    Ok(MotionNoiseTrack {
        anchors,
        anchor_spacing,
        seed,
    })
}

/// Sinusoid bank of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveParams {
    pub amplitudes: Vec<f64>,
    pub angular_frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionCode {
    pub t: f64,
    pub values: Vec<f64>,
}

/// Learned parameters of the motion-code front end.
#[derive(Debug, Clone)]
pub struct MotionEncoder {
    pub cfg: MotionConfig,
    /// `(d_z, d_z, kernel)` kernels with `(d_z)` biases.
    pub conv: Vec<(ParamId, ParamId)>,
    /// `d_z -> 3·waves` as `[amplitude | frequency | phase]`.
    pub head: Linear,
    /// Fixed per-wave base angular frequency, log-spaced periods 8..128 frames.
    pub base_freq: Vec<f64>,
}

impl MotionEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: MotionConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let d = cfg.d_z;
        let std = (1.0 / (d * cfg.kernel) as f64).sqrt();
        let conv = (0..cfg.conv_layers)
            .map(|i| {
                let w = store.add(
                    format!("motion.conv{i}.weight"),
                    Group::MotionEncoder,
                    Tensor::randn(&[d, d, cfg.kernel], std, rng),
                );
                let b = store.add(format!("motion.conv{i}.bias"), Group::MotionEncoder, Tensor::zeros(&[d]));
                (w, b)
            })
            .collect();
        let head = Linear::standard(store, "motion.head", Group::MotionEncoder, d, 3 * cfg.waves, rng);
        let base_freq = base_frequencies(cfg.waves);
        MotionEncoder {
            cfg,
            conv,
            head,
            base_freq,
        }
    }

    /// Per-anchor features `(num_anchors, d_z)` after the temporal conv stack.
    pub fn temporal_conv<T: Scalar>(&self, s: &mut Session<'_, T>, track: &MotionNoiseTrack) -> Result<Var> {
        if track.d_z() != self.cfg.d_z {
            return Err(Error::shape("temporal_conv", track.anchors.shape(), &[track.num_anchors(), self.cfg.d_z]));
        }
        let a = track.num_anchors();
        let anchors = track.anchors.transpose2()?.cast::<T>();
        let mut x = s.graph.constant(anchors.reshape(&[1, self.cfg.d_z, a])?);
        let pad = self.cfg.kernel / 2;
        for (i, &(w, b)) in self.conv.iter().enumerate() {
            let wv = s.param(w);
            let bv = s.param(b);
            x = s.graph.conv1d(x, wv, pad)?;
            let bv = s.graph.reshape(bv, &[1, self.cfg.d_z, 1])?;
            x = s.graph.add(x, bv)?;
            if i + 1 < self.conv.len() {
                x = s.graph.leaky_relu(x, LRELU_SLOPE)?;
            }
        }
        let x = s.graph.reshape(x, &[self.cfg.d_z, a])?;
        s.graph.transpose(x)
    }

    /// Wave parameters for every anchor: `(amplitude, frequency, phase)`, each `(A, F)`.
    pub fn wave_params_all<T: Scalar>(&self, s: &mut Session<'_, T>, features: Var) -> Result<(Var, Var, Var)> {
        let f = self.cfg.waves;
        let raw = self.head.forward(s, features)?;
        let g = &mut s.graph;
        let ra = g.slice(raw, 1, 0, f)?;
        let rw = g.slice(raw, 1, f, f)?;
        let phase = g.slice(raw, 1, 2 * f, f)?;
        let ra = g.add_scalar(ra, 1.0)?;
        let amp = g.softplus(ra)?;
        let rw = g.add_scalar(rw, 1.0)?;
        let rw = g.softplus(rw)?;
        let base = Tensor::from_f64(&[f], &self.base_freq)?;
        let base = g.constant(base);
        let freq = g.mul(rw, base)?;
        Ok((amp, freq, phase))
    }

    /// Parameters of one anchor, as plain values.
    pub fn wave_params<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        features: Var,
        anchor: usize,
    ) -> Result<WaveParams> {
        let rows = s.graph.shape(features)[0];
        if anchor >= rows {
            return Err(Error::Invalid(format!("anchor {anchor} outside track of {rows}")));
        }
        let (a, w, p) = self.wave_params_all(s, features)?;
        let row = |v: Var, s: &Session<'_, T>| -> Vec<f64> {
            let f = self.cfg.waves;
            s.graph.value(v).to_f64_vec()[anchor * f..(anchor + 1) * f].to_vec()
        };
        Ok(WaveParams {
            amplitudes: row(a, s),
            angular_frequencies: row(w, s),
            phases: row(p, s),
        })
    }

    /// Motion codes `(times.len(), waves)` for one track.
    pub fn motion_codes<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        track: &MotionNoiseTrack,
        times: &[f64],
    ) -> Result<Var> {
        let features = self.temporal_conv(s, track)?;
        let (amp, freq, phase) = self.wave_params_all(s, features)?;
        let mut rows = Vec::with_capacity(times.len());
        for &t in times {
            rows.push(self.code_at(s, track, (amp, freq, phase), t)?);
        }
        s.graph.concat(&rows, 0)
    }

    fn code_at<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        track: &MotionNoiseTrack,
        (amp, freq, phase): (Var, Var, Var),
        t: f64,
    ) -> Result<Var> {
        if !(t >= 0.0) {
            return Err(Error::Invalid(format!("motion code time must be >= 0, got {t}")));
        }
        let (k, alpha) = interval(track, t);
        let g = &mut s.graph;
        let mut lerp = |v: Var| -> Result<Var> {
            let lo = g.slice(v, 0, k, 1)?;
            let hi = g.slice(v, 0, k + 1, 1)?;
            let lo = g.scale(lo, 1.0 - alpha)?;
            let hi = g.scale(hi, alpha)?;
            g.add(lo, hi)
        };
        let a = lerp(amp)?;
        let w = lerp(freq)?;
        let p = lerp(phase)?;
        let wt = g.scale(w, t)?;
        let arg = g.add(wt, p)?;
        let sn = g.sin(arg)?;
        g.mul(a, sn)
    }

    /// Convenience evaluation outside of training.
    pub fn motion_code<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        track: &MotionNoiseTrack,
        t: f64,
    ) -> Result<MotionCode> {
        let mut s = Session::frozen(store);
        let v = self.motion_codes(&mut s, track, &[t])?;
        Ok(MotionCode {
            t,
            values: s.graph.value(v).to_f64_vec(),
        })
    }
}

/// Interval index and interpolation weight for time `t`; held constant past the last anchor.
fn interval(track: &MotionNoiseTrack, t: f64) -> (usize, f64) {
    let last = track.num_anchors() - 2;
    let pos = t / track.anchor_spacing;
    let k = (pos.floor() as usize).min(last);
    let alpha = (pos - k as f64).clamp(0.0, 1.0);
    (k, alpha)
}

fn base_frequencies(n: usize) -> Vec<f64> {
    let (lo, hi): (f64, f64) = (8.0, 128.0);
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let period = lo * (hi / lo).powf(frac);
            2.0 * PI / period
        })
        .collect()
}
