//! Losses, optimizer and the adversarial training step.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::modconv::AttentionRecord;
use crate::motion::{sample_motion_noise, MotionNoiseTrack};
use crate::networks::{Discriminator, Generator};
use crate::params::{Group, ParamId, ParamStore, Session};
use crate::scalar::{lit, Scalar};
use crate::synthetic::{make_dataset, parse_manifest, SceneSpec};
use crate::tensor::Tensor;

/// Non-saturating logistic losses `(loss_D, loss_G)` for one real and one fake logit.
pub fn adversarial_losses<T: Scalar>(g: &mut Graph<T>, logit_real: Var, logit_fake: Var) -> Result<(Var, Var)> {
    let fake_term = g.softplus(logit_fake)?;
    let nr = g.neg(logit_real)?;
    let real_term = g.softplus(nr)?;
    let loss_d = g.add(fake_term, real_term)?;
    let nf = g.neg(logit_fake)?;
    let loss_g = g.softplus(nf)?;
    Ok((loss_d, loss_g))
}

/// `½‖∂logit/∂inputs‖²`, differentiable with respect to the discriminator.
pub fn r1_penalty<T: Scalar>(g: &mut Graph<T>, logit: Var, inputs: Var) -> Result<Var> {
    let gi = g.grad(logit, &[inputs])?[0];
    let sq = g.square(gi)?;
    let s = g.sum(sq)?;
    g.scale(s, 0.5)
}

/// `(1/T)·Σ_t ‖A_tᵀA_t‖_F` per layer, averaged over layers.
///
/// `records[t][l]` holds the logits of layer `l` at frame `t`. With
/// `identity_target` the identity is subtracted from each gram matrix.
pub fn diversity_loss<T: Scalar>(g: &mut Graph<T>, records: &[Vec<AttentionRecord>], identity_target: bool) -> Result<Var> {
    let logits: Vec<Vec<Var>> = records
        .iter()
        .map(|frame| frame.iter().map(|r| r.logits).collect())
        .collect();
    diversity_loss_logits(g, &logits, identity_target)
}

/// [`diversity_loss`] on raw logits `logits[t][l]: (c_out, K)`.
pub fn diversity_loss_logits<T: Scalar>(g: &mut Graph<T>, logits: &[Vec<Var>], identity_target: bool) -> Result<Var> {
    let frames = logits.len();
    if frames == 0 || logits[0].is_empty() {
        return Err(Error::Invalid("diversity loss needs at least one frame and layer".into()));
    }
    let layers = logits[0].len();
    let mut terms = Vec::with_capacity(frames * layers);
    for frame in logits {
        if frame.len() != layers {
            return Err(Error::Invalid("every frame needs the same layers".into()));
        }
        for &a in frame {
            let at = g.transpose(a)?;
            let mut gram = g.matmul(at, a)?;
            if identity_target {
                let k = g.shape(gram)[0];
                let eye = Tensor::from_fn(&[k, k], |i| if i / k == i % k { T::one() } else { T::zero() });
                let eye = g.constant(eye);
                gram = g.sub(gram, eye)?;
            }
            let sq = g.square(gram)?;
            let s = g.sum(sq)?;
            terms.push(g.sqrt(s)?);
        }
    }
    let total = sum_vars(g, &terms)?;
    g.scale(total, 1.0 / (frames * layers) as f64)
}

fn sum_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

fn mean_vars<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Var> {
    let s = sum_vars(g, vars)?;
    g.scale(s, 1.0 / vars.len() as f64)
}

/// `t` strictly increasing integer frame times within `[0, clip_length)`.
pub fn sample_clip_times<R: Rng + ?Sized>(rng: &mut R, clip_length: usize, t: usize, max_gap: usize) -> Result<Vec<f64>> {
    if t == 0 || clip_length < t {
        return Err(Error::Invalid(format!("clip of length {clip_length} cannot hold {t} frames")));
    }
    if max_gap == 0 {
        return Err(Error::Invalid("max_gap must be positive".into()));
    }
    let last = clip_length - 1;
    let mut times = Vec::with_capacity(t);
    let mut cur = rng.random_range(0..=clip_length - t);
    times.push(cur as f64);
    for i in 1..t {
        let left_after = t - 1 - i;
        let hi = max_gap.min(last - left_after - cur);
        cur += rng.random_range(1..=hi);
        times.push(cur as f64);
    }
    Ok(times)
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            beta1,
            beta2,
            eps,
        }
    }

    /// One update with bias correction for step `t ≥ 1`.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64, t: u64) {
        let (b1, b2): (T, T) = (lit(self.beta1), lit(self.beta2));
        let c1: T = lit(1.0 - self.beta1.powf(t as f64));
        let c2: T = lit(1.0 - self.beta2.powf(t as f64));
        let (lr, eps): (T, T) = (lit(lr), lit(self.eps));
        let one = T::one();
        for (id, g) in grads {
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.value_mut(*id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub l_div: f64,
    /// Zero on steps without the lazy penalty.
    pub r1: f64,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,loss_d,loss_g,l_div,r1,grad_norm_g,grad_norm_d";
}

impl fmt::Display for MetricsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.step, self.loss_d, self.loss_g, self.l_div, self.r1, self.grad_norm_g, self.grad_norm_d
        )
    }
}

/// Latents of one generated clip.
#[derive(Debug, Clone)]
pub struct FakeSample<T: Scalar> {
    pub z_c: Tensor<T>,
    pub track: MotionNoiseTrack,
    pub times: Vec<f64>,
}

/// Everything a run needs to continue: model, optimizer, RNGs and step.
pub struct TrainState<T: Scalar> {
    pub cfg: TrainConfig,
    pub store: ParamStore<T>,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam: Adam<T>,
    pub step: u64,
    pub model_rng: ChaCha8Rng,
    pub data_rng: ChaCha8Rng,
    pub scenes: Vec<SceneSpec>,
}

/// Data-side stream; the dataset itself is sampled from stream 0 of the same seed.
const DATA_STREAM: u64 = 1;

pub fn load_scenes(cfg: &TrainConfig) -> Result<Vec<SceneSpec>> {
    if cfg.manifest.is_empty() {
        make_dataset(cfg.dataset, cfg.dataset_size, cfg.gen.resolution, cfg.data_seed)
    } else {
        let text = std::fs::read_to_string(&cfg.manifest).map_err(|e| Error::io(&cfg.manifest, e))?;
        let scenes = parse_manifest(&text)?;
        if scenes.is_empty() || scenes.iter().any(|s| s.resolution != cfg.gen.resolution) {
            return Err(Error::Config(format!(
                "manifest {} must hold scenes at resolution {}",
                cfg.manifest, cfg.gen.resolution
            )));
        }
        Ok(scenes)
    }
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op: name.to_string() })
    }
}

fn grad_norm<T: Scalar>(grads: &[(ParamId, Tensor<T>)]) -> f64 {
    grads.iter().map(|(_, g)| g.sq_norm().as_f64()).sum::<f64>().sqrt()
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.dtype != T::DTYPE {
            return Err(Error::Config(format!(
                "config asks for {} parameters, state is {}",
                cfg.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.model_seed);
        let mut store = ParamStore::new();
        let generator = Generator::new(cfg.gen.clone(), &mut store, &mut model_rng)?;
        let discriminator = Discriminator::new(cfg.discriminator_config(), &mut store, &mut model_rng)?;
        let adam = Adam::new(&store, cfg.beta1, cfg.beta2, cfg.adam_eps);
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        data_rng.set_stream(DATA_STREAM);
        let scenes = load_scenes(&cfg)?;
        Ok(TrainState {
            cfg,
            store,
            generator,
            discriminator,
            adam,
            step: 0,
            model_rng,
            data_rng,
            scenes,
        })
    }

    /// Fresh content noise, motion track and frame times from the model stream.
    pub fn sample_fake(&mut self) -> Result<FakeSample<T>> {
        let d_c = self.cfg.gen.style.d_c;
        let rng = &mut self.model_rng;
        let z: Vec<f64> = (0..d_c).map(|_| rng.sample(StandardNormal)).collect();
        let seed: u64 = rng.random();
        let times = sample_clip_times(rng, self.cfg.clip_length, self.cfg.frames, self.cfg.max_gap)?;
        let track = self.track_for(seed, *times.last().expect("non-empty"))?;
        Ok(FakeSample {
            z_c: Tensor::from_f64(&[1, d_c], &z)?,
            track,
            times,
        })
    }

    /// Motion track from `seed` long enough to cover `[0, t_max]`.
    pub fn track_for(&self, seed: u64, t_max: f64) -> Result<MotionNoiseTrack> {
        let m = &self.cfg.gen.motion;
        let n = m.track_anchors(t_max);
        sample_motion_noise(seed, n, m.d_z, m.anchor_spacing)
    }

    /// Real clip frames `(T, 3, H, W)` and times from the data stream.
    pub fn sample_real(&mut self) -> Result<(Tensor<T>, Vec<f64>)> {
        let idx = self.data_rng.random_range(0..self.scenes.len());
        let times = sample_clip_times(&mut self.data_rng, self.cfg.clip_length, self.cfg.frames, self.cfg.max_gap)?;
        let clip = self.scenes[idx].render_clip::<T>(&times)?;
        Ok((clip.frames, times))
    }

    pub fn sample_real_batch(&mut self) -> Result<Vec<(Tensor<T>, Vec<f64>)>> {
        (0..self.cfg.batch).map(|_| self.sample_real()).collect()
    }

    /// Samples a real batch from the data stream and trains on it.
    pub fn train_step(&mut self) -> Result<MetricsRow> {
        let reals = self.sample_real_batch()?;
        self.train_step_on(&reals)
    }

    /// One discriminator update followed by one generator update on `reals`.
    pub fn train_step_on(&mut self, reals: &[(Tensor<T>, Vec<f64>)]) -> Result<MetricsRow> {
        let b = reals.len();
        if b == 0 {
            return Err(Error::Invalid("empty real batch".into()));
        }
        let t = self.step + 1;
        let r1_now = self.cfg.lambda_r1 > 0.0 && self.step.is_multiple_of(self.cfg.r1_interval);
        let fakes: Vec<FakeSample<T>> = (0..b).map(|_| self.sample_fake()).collect::<Result<_>>()?;

        let (loss_d, r1, grads_d) = {
            let mut s = Session::new(&self.store, |g| g == Group::Discriminator);
            let mut ld = Vec::with_capacity(b);
            let mut pen = Vec::with_capacity(b);
            for (fake, (real, rtimes)) in fakes.iter().zip(reals) {
                let z = s.graph.constant(fake.z_c.clone());
                let gen = self.generator.generate(&mut s, z, &fake.track, &fake.times)?;
                let lf = self.discriminator.clip_logit(&mut s, gen.frames, &fake.times)?;
                let x = if r1_now { s.graph.leaf(real.clone()) } else { s.graph.constant(real.clone()) };
                let lr = self.discriminator.clip_logit(&mut s, x, rtimes)?;
                ld.push(adversarial_losses(&mut s.graph, lr, lf)?.0);
                if r1_now {
                    pen.push(r1_penalty(&mut s.graph, lr, x)?);
                }
            }
            let loss = mean_vars(&mut s.graph, &ld)?;
            let loss_v = check_finite("loss_d", s.graph.value(loss).item().as_f64())?;
            let (total, r1_v) = if r1_now {
                let r1 = mean_vars(&mut s.graph, &pen)?;
                let r1_v = check_finite("r1", s.graph.value(r1).item().as_f64())?;
                let w = self.cfg.lambda_r1 * self.cfg.r1_interval as f64;
                let r1w = s.graph.scale(r1, w)?;
                (s.graph.add(loss, r1w)?, r1_v)
            } else {
                (loss, 0.0)
            };
            (loss_v, r1_v, s.param_grads(total)?)
        };
        let grad_norm_d = check_finite("grad_norm_d", grad_norm(&grads_d))?;
        self.adam.update(&mut self.store, &grads_d, self.cfg.lr_d, t);

        let fakes: Vec<FakeSample<T>> = (0..b).map(|_| self.sample_fake()).collect::<Result<_>>()?;
        let (loss_g, l_div, grads_g) = {
            let mut s = Session::new(&self.store, Group::is_generator);
            let mut lg = Vec::with_capacity(b);
            let mut div = Vec::with_capacity(b);
            for fake in &fakes {
                let z = s.graph.constant(fake.z_c.clone());
                let gen = self.generator.generate(&mut s, z, &fake.track, &fake.times)?;
                let lf = self.discriminator.clip_logit(&mut s, gen.frames, &fake.times)?;
                let nf = s.graph.neg(lf)?;
                lg.push(s.graph.softplus(nf)?);
                div.push(diversity_loss(&mut s.graph, &gen.records, self.cfg.div_identity_target)?);
            }
            let loss = mean_vars(&mut s.graph, &lg)?;
            let loss_v = check_finite("loss_g", s.graph.value(loss).item().as_f64())?;
            let ldiv = mean_vars(&mut s.graph, &div)?;
            let ldiv_v = check_finite("l_div", s.graph.value(ldiv).item().as_f64())?;
            let w = self.cfg.div_weight();
            let total = if w > 0.0 {
                let d = s.graph.scale(ldiv, w)?;
                s.graph.add(loss, d)?
            } else {
                loss
            };
            (loss_v, ldiv_v, s.param_grads(total)?)
        };
        let grad_norm_g = check_finite("grad_norm_g", grad_norm(&grads_g))?;
        self.adam.update(&mut self.store, &grads_g, self.cfg.lr_g, t);

        self.step += 1;
        Ok(MetricsRow {
            step: self.step,
            loss_d,
            loss_g,
            l_div,
            r1,
            grad_norm_g,
            grad_norm_d,
        })
    }
}
