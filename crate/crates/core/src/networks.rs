//! Generator and discriminator.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::hypernet::{LayerShape, StyleConfig, StyleNetwork};
use crate::layers::{Linear, LRELU_SLOPE};
use crate::modconv::{AttentionRecord, ModConv, Strategy};
use crate::motion::{MotionConfig, MotionEncoder, MotionNoiseTrack};
use crate::params::{Group, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMG_CHANNELS: usize = 3;

/// Frames `(N, C, H, W)` in [−1, 1] with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip<T: Scalar> {
    pub frames: Tensor<T>,
    pub times: Vec<f64>,
}

impl<T: Scalar> VideoClip<T> {
    pub fn new(frames: Tensor<T>, times: Vec<f64>) -> Result<Self> {
        if frames.rank() != 4 || frames.shape()[0] != times.len() {
            return Err(Error::shape("video_clip", frames.shape(), &[times.len()]));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("clip times must be strictly increasing".into()));
        }
        Ok(VideoClip { frames, times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<Tensor<T>> {
        let s = self.frames.shape();
        self.frames.slice_axis(0, i, 1)?.reshape(&s[1..])
    }
}

/// Numeric frame-difference augmentation: frames, then `|x_{i+1} − x_i|` at midpoint times.
pub fn frame_differences<T: Scalar>(clip: &VideoClip<T>) -> Result<VideoClip<T>> {
    let mut g = Graph::new();
    let x = g.constant(clip.frames.clone());
    let (items, times) = frame_differences_graph(&mut g, x, &clip.times)?;
    Ok(VideoClip {
        frames: g.value(items).clone(),
        times,
    })
}

/// Graph version of [`frame_differences`]; `frames: (N, C, H, W)` → `(2N−1, C, H, W)`.
pub fn frame_differences_graph<T: Scalar>(g: &mut Graph<T>, frames: Var, times: &[f64]) -> Result<(Var, Vec<f64>)> {
    let n = g.shape(frames)[0];
    if n < 2 {
        return Err(Error::Invalid(format!("frame differences need at least 2 frames, got {n}")));
    }
    if times.len() != n {
        return Err(Error::shape("frame_differences", g.shape(frames), &[times.len()]));
    }
    let head = g.slice(frames, 0, 0, n - 1)?;
    let tail = g.slice(frames, 0, 1, n - 1)?;
    let d = g.sub(tail, head)?;
    let d = g.abs(d)?;
    let items = g.concat(&[frames, d], 0)?;
    let mut t = times.to_vec();
    t.extend(times.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    Ok((items, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Output side length; `4·2^b` for `b = channels.len()` blocks.
    pub resolution: usize,
    /// Width of each synthesis block.
    pub channels: Vec<usize>,
    /// Channels of the learned constant input.
    pub const_channels: usize,
    pub style: StyleConfig,
    pub motion: MotionConfig,
    pub strategy: Strategy,
    pub demod: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            resolution: 32,
            channels: vec![128, 96, 64],
            const_channels: 128,
            style: StyleConfig::default(),
            motion: MotionConfig::default(),
            strategy: Strategy::ContentFirst,
            demod: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let b = self.channels.len();
        if b == 0 || self.resolution != 4 << b {
            return Err(Error::Config(format!(
                "resolution {} needs 4·2^b with b = {} blocks",
                self.resolution, b
            )));
        }
        if self.motion.waves != self.style.d_v {
            return Err(Error::Config(format!(
                "motion code width {} differs from motion network input {}",
                self.motion.waves, self.style.d_v
            )));
        }
        if self.style.k == 0 || self.style.rank == 0 || self.style.d_m == 0 {
            return Err(Error::Config("K, R and d_m must be positive".into()));
        }
        Ok(())
    }

    /// Shapes of every modulated conv layer, in forward order.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut c_prev = self.const_channels + self.style.d_v;
        let mut out = Vec::new();
        for &c in &self.channels {
            out.push(LayerShape::new(c, c_prev, 3, 3));
            out.push(LayerShape::new(c, c, 3, 3));
            c_prev = c;
        }
        out
    }
}

/// Frames of one generated clip with every layer's attention record per frame.
pub struct GeneratedClip {
    /// `(T, 3, H, W)`.
    pub frames: Var,
    pub records: Vec<Vec<AttentionRecord>>,
    pub motion_codes: Var,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub motion: MotionEncoder,
    pub styles: StyleNetwork,
    pub constant: ParamId,
    pub convs: Vec<ModConv>,
    pub to_rgb: (ParamId, ParamId),
}

impl Generator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: GeneratorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let motion = MotionEncoder::new(cfg.motion.clone(), store, rng);
        let shapes = cfg.layer_shapes();
        let styles = StyleNetwork::new(cfg.style.clone(), shapes.clone(), store, rng);
        let constant = store.add("synthesis.const", Group::Constant, Tensor::randn(&[1, cfg.const_channels, 4, 4], 1.0, rng));
        let convs = shapes
            .iter()
            .enumerate()
            .map(|(i, &sh)| ModConv::new(store, i, sh, cfg.demod, rng))
            .collect();
        let c_last = *cfg.channels.last().expect("validated");
        let std = 1.0 / (c_last as f64).sqrt();
        let rgb_w = store.add("to_rgb.weight", Group::ToRgb, Tensor::randn(&[IMG_CHANNELS, c_last, 1, 1], std, rng));
        let rgb_b = store.add("to_rgb.bias", Group::ToRgb, Tensor::zeros(&[IMG_CHANNELS]));
        Ok(Generator {
            cfg,
            motion,
            styles,
            constant,
            convs,
            to_rgb: (rgb_w, rgb_b),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.convs.len()
    }

    /// Index of the first layer of block `b`.
    pub fn block_first_layer(&self, b: usize) -> usize {
        2 * b
    }

    /// `z_c: (1, d_c)`; one frame per entry of `times`.
    pub fn generate<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_c: Var,
        track: &MotionNoiseTrack,
        times: &[f64],
    ) -> Result<GeneratedClip> {
        if times.is_empty() {
            return Err(Error::Invalid("generate needs at least one time".into()));
        }
        let w = self.styles.map_content(s, z_c)?;
        let content: Vec<Var> = (0..self.num_layers())
            .map(|l| self.styles.affine_style(s, w, l))
            .collect::<Result<_>>()?;
        let codes = self.motion.motion_codes(s, track, times)?;
        let mut frames = Vec::with_capacity(times.len());
        let mut records = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let v = s.graph.slice(codes, 0, i, 1)?;
            let (f, r) = self.frame(s, w, v, &content)?;
            frames.push(f);
            records.push(r);
        }
        let frames = s.graph.concat(&frames, 0)?;
        Ok(GeneratedClip {
            frames,
            records,
            motion_codes: codes,
        })
    }

    /// One frame `(1, 3, H, W)` from latent `w` and motion code `v: (1, d_v)`.
    fn frame<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        w: Var,
        v: Var,
        content: &[Var],
    ) -> Result<(Var, Vec<AttentionRecord>)> {
        let m = self.styles.motion_vectors(s, w, v)?;
        let h = self.styles.hyper_trunk(s, m)?;
        let c = s.param(self.constant);
        let d_v = self.cfg.style.d_v;
        let vb = s.graph.reshape(v, &[1, d_v, 1, 1])?;
        let vb = s.graph.broadcast_to(vb, &[1, d_v, 4, 4])?;
        let mut x = s.graph.concat(&[c, vb], 1)?;
        let mut records = Vec::with_capacity(self.convs.len());
        for (l, conv) in self.convs.iter().enumerate() {
            if l % 2 == 0 {
                x = s.graph.upsample2x(x)?;
            }
            let mm = self.styles.modulation(s, h, l)?;
            let (y, r) = conv.forward(s, x, content[l], mm, self.cfg.strategy)?;
            x = y;
            records.push(r);
        }
        let rw = s.param(self.to_rgb.0);
        let rb = s.param(self.to_rgb.1);
        let y = s.graph.conv2d(x, rw, (0, 0))?;
        let rb = s.graph.reshape(rb, &[1, IMG_CHANNELS, 1, 1])?;
        let y = s.graph.add(y, rb)?;
        Ok((s.graph.tanh(y)?, records))
    }

    /// Motion styles `(K, R, c_in+kh+kw)` of `layer` at time `t`.
    pub fn motion_styles<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        z_c: Var,
        track: &MotionNoiseTrack,
        t: f64,
        layer: usize,
    ) -> Result<Var> {
        self.styles.layer(layer)?;
        let w = self.styles.map_content(s, z_c)?;
        let v = self.motion.motion_codes(s, track, &[t])?;
        let m = self.styles.motion_vectors(s, w, v)?;
        self.styles.hyper_styles(s, m, layer)
    }

    /// Convenience: frames of a clip as plain values, no gradients.
    pub fn sample<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        z_c: &Tensor<T>,
        track: &MotionNoiseTrack,
        times: &[f64],
    ) -> Result<VideoClip<T>> {
        let mut s = Session::frozen(store);
        let z = s.graph.constant(z_c.clone());
        let out = self.generate(&mut s, z, track, times)?;
        VideoClip::new(s.graph.value(out.frames).clone(), times.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub resolution: usize,
    /// Encoder widths: fromRGB output, then one per downsampling to 8².
    pub channels: Vec<usize>,
    pub head_channels: usize,
    pub d_g: usize,
    pub time_freqs: usize,
    /// Frames per clip; fixes the head width together with `motion_diff`.
    pub frames: usize,
    pub motion_diff: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            resolution: 32,
            channels: vec![32, 64, 64],
            head_channels: 128,
            d_g: 64,
            time_freqs: 8,
            frames: 3,
            motion_diff: true,
        }
    }
}

/// Feature resolution where per-item features are concatenated.
pub const FEATURE_RES: usize = 8;

impl DiscriminatorConfig {
    pub fn n_items(&self) -> usize {
        if self.motion_diff {
            2 * self.frames - 1
        } else {
            self.frames
        }
    }

    fn downsamples(&self) -> Result<usize> {
        let r = self.resolution;
        if r < FEATURE_RES || !r.is_power_of_two() {
            return Err(Error::Config(format!("discriminator resolution {r} must be a power of two ≥ 8")));
        }
        Ok((r / FEATURE_RES).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.downsamples()?;
        if self.channels.len() != n + 1 {
            return Err(Error::Config(format!(
                "discriminator needs {} encoder widths at resolution {}, got {}",
                n + 1,
                self.resolution,
                self.channels.len()
            )));
        }
        if self.frames < 2 && self.motion_diff {
            return Err(Error::Config("motion-diff needs at least 2 frames".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("discriminator needs at least one frame".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub from_rgb: (ParamId, ParamId),
    pub encoder: Vec<(ParamId, ParamId)>,
    pub head_conv: (ParamId, ParamId),
    pub head_fc: Linear,
    pub head_out: Linear,
    pub time_proj: Linear,
    pub freqs: Vec<f64>,
}

fn conv_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let w = store.add(format!("{name}.weight"), Group::Discriminator, Tensor::randn(&[c_out, c_in, k, k], std, rng));
    let b = store.add(format!("{name}.bias"), Group::Discriminator, Tensor::zeros(&[c_out]));
    (w, b)
}

impl Discriminator {
    pub fn new<T: Scalar, R: Rng + ?Sized>(cfg: DiscriminatorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ch = &cfg.channels;
        let from_rgb = conv_params(store, "disc.from_rgb", ch[0], IMG_CHANNELS, 1, rng);
        let encoder = ch
            .windows(2)
            .enumerate()
            .map(|(i, w)| conv_params(store, &format!("disc.enc{i}"), w[1], w[0], 3, rng))
            .collect();
        let c_e = *ch.last().expect("validated");
        let head_conv = conv_params(store, "disc.head_conv", cfg.head_channels, cfg.n_items() * c_e, 3, rng);
        let flat = cfg.head_channels * (FEATURE_RES / 2) * (FEATURE_RES / 2);
        let head_fc = Linear::new(store, "disc.head_fc", Group::Discriminator, flat, cfg.d_g, (2.0 / flat as f64).sqrt(), 0.0, rng);
        let head_out = Linear::new(store, "disc.head_out", Group::Discriminator, cfg.d_g, cfg.d_g, 0.0, 0.0, rng);
        let time_proj = Linear::standard(store, "disc.time_proj", Group::Discriminator, 2 * cfg.time_freqs, cfg.d_g, rng);
        let freqs = (0..cfg.time_freqs).map(|j| 1.0 / 2f64.powi(j as i32)).collect();
        Ok(Discriminator {
            cfg,
            from_rgb,
            encoder,
            head_conv,
            head_fc,
            head_out,
            time_proj,
            freqs,
        })
    }

    /// Parameters of the per-item encoder; shared by every item.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.from_rgb.0, self.from_rgb.1];
        for &(w, b) in &self.encoder {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn conv_act<T: Scalar>(s: &mut Session<'_, T>, x: Var, p: (ParamId, ParamId), pad: usize) -> Result<Var> {
        let w = s.param(p.0);
        let b = s.param(p.1);
        let c = s.graph.shape(w)[0];
        let y = s.graph.conv2d(x, w, (pad, pad))?;
        let b = s.graph.reshape(b, &[1, c, 1, 1])?;
        let y = s.graph.add(y, b)?;
        s.graph.leaky_relu(y, LRELU_SLOPE)
    }

    /// Per-item features `(n, c_e, 8, 8)` from items `(n, 3, H, W)`.
    pub fn encode<T: Scalar>(&self, s: &mut Session<'_, T>, items: Var) -> Result<Var> {
        let mut x = Self::conv_act(s, items, self.from_rgb, 0)?;
        for &p in &self.encoder {
            x = Self::conv_act(s, x, p, 1)?;
            x = s.graph.avgpool2x(x)?;
        }
        Ok(x)
    }

    /// Sinusoid time-delta embedding summed over items, `(1, d_g)`.
    pub fn time_embedding<T: Scalar>(&self, s: &mut Session<'_, T>, times: &[f64]) -> Result<Var> {
        let f = self.freqs.len();
        let t0 = times[0];
        let mut enc = Vec::with_capacity(times.len() * 2 * f);
        for &t in times {
            let dt = t - t0;
            enc.extend(self.freqs.iter().map(|w| (w * dt).sin()));
            enc.extend(self.freqs.iter().map(|w| (w * dt).cos()));
        }
        let enc = s.graph.constant(Tensor::from_f64(&[times.len(), 2 * f], &enc)?);
        let e = self.time_proj.forward(s, enc)?;
        s.graph.sum_axis(e, 0, true)
    }

    /// Scalar logit for one clip's items `(n_items, 3, H, W)` at `times`.
    pub fn discriminate<T: Scalar>(&self, s: &mut Session<'_, T>, items: Var, times: &[f64]) -> Result<Var> {
        let n = s.graph.shape(items)[0];
        if n != times.len() || n != self.cfg.n_items() {
            return Err(Error::Invalid(format!(
                "discriminator expects {} items, got {} items with {} times",
                self.cfg.n_items(),
                n,
                times.len()
            )));
        }
        let feats = self.encode(s, items)?;
        let fs = s.graph.shape(feats).to_vec();
        let x = s.graph.reshape(feats, &[1, fs[0] * fs[1], fs[2], fs[3]])?;
        let x = Self::conv_act(s, x, self.head_conv, 1)?;
        let x = s.graph.avgpool2x(x)?;
        let flat = s.graph.value(x).len();
        let x = s.graph.reshape(x, &[1, flat])?;
        let x = self.head_fc.forward(s, x)?;
        let x = s.graph.leaky_relu(x, LRELU_SLOPE)?;
        let gvec = self.head_out.forward(s, x)?;
        let e = self.time_embedding(s, times)?;
        let logit = s.graph.dot(e, gvec)?;
        s.graph.scale(logit, 1.0 / (self.cfg.d_g as f64).sqrt())
    }

    /// Logit for a clip's frames `(N, 3, H, W)`, adding frame differences when enabled.
    pub fn clip_logit<T: Scalar>(&self, s: &mut Session<'_, T>, frames: Var, times: &[f64]) -> Result<Var> {
        if self.cfg.motion_diff {
            let (items, t) = frame_differences_graph(&mut s.graph, frames, times)?;
            self.discriminate(s, items, &t)
        } else {
            self.discriminate(s, frames, times)
        }
    }
}
