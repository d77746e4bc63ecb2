//! Flat `key=value` run configuration.
//!
//! One pair per line, `#` starts a comment, unknown keys are rejected.
//! [`TrainConfig::to_text`] writes every key, so a saved config fully
//! determines a run.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hypernet::StyleConfig;
use crate::modconv::Strategy;
use crate::motion::MotionConfig;
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::scalar::DType;
use crate::synthetic::{DatasetKind, CLIP_LENGTH};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gen: GeneratorConfig,
    pub disc_channels: Vec<usize>,
    pub disc_head_channels: usize,
    pub d_g: usize,
    pub time_freqs: usize,
    pub motion_diff: bool,
    /// Frames per training clip.
    pub frames: usize,
    pub batch: usize,
    pub steps: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub use_div: bool,
    pub lambda_div: f64,
    /// Penalize `‖AᵀA − I‖_F` instead of `‖AᵀA‖_F`.
    pub div_identity_target: bool,
    pub lambda_r1: f64,
    pub r1_interval: u64,
    pub max_gap: usize,
    pub clip_length: usize,
    pub model_seed: u64,
    pub data_seed: u64,
    pub dataset: DatasetKind,
    pub dataset_size: usize,
    /// Scene manifest to train on instead of a generated dataset (empty = generate).
    pub manifest: String,
    pub checkpoint_every: u64,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gen: GeneratorConfig::default(),
            disc_channels: vec![32, 64, 64],
            disc_head_channels: 128,
            d_g: 64,
            time_freqs: 8,
            motion_diff: true,
            frames: 3,
            batch: 8,
            steps: 20_000,
            lr_g: 2e-3,
            lr_d: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            use_div: true,
            lambda_div: 1.0,
            div_identity_target: false,
            lambda_r1: 1.0,
            r1_interval: 16,
            max_gap: 8,
            clip_length: CLIP_LENGTH,
            model_seed: 0,
            data_seed: 1,
            dataset: DatasetKind::TwoMotion,
            dataset_size: 512,
            manifest: String::new(),
            checkpoint_every: 1000,
            dtype: DType::F32,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for key `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for key `{key}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Small 16² model used by the gradient checker.
    pub fn gradcheck_preset(k: usize) -> Self {
        TrainConfig {
            gen: GeneratorConfig {
                resolution: 16,
                channels: vec![4, 3],
                const_channels: 3,
                style: StyleConfig {
                    d_c: 4,
                    mapping_layers: 2,
                    motion_hidden: vec![6],
                    k,
                    d_m: 4,
                    d_h: 5,
                    rank: 1,
                    d_v: 3,
                    head_std: 0.3,
                },
                motion: MotionConfig {
                    d_z: 3,
                    waves: 3,
                    conv_layers: 1,
                    kernel: 11,
                    anchor_spacing: 4.0,
                },
                strategy: Strategy::ContentFirst,
                demod: true,
            },
            disc_channels: vec![3, 4],
            disc_head_channels: 4,
            d_g: 4,
            time_freqs: 2,
            batch: 1,
            dataset_size: 4,
            dtype: DType::F64,
            ..TrainConfig::default()
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            resolution: self.gen.resolution,
            channels: self.disc_channels.clone(),
            head_channels: self.disc_head_channels,
            d_g: self.d_g,
            time_freqs: self.time_freqs,
            frames: self.frames,
            motion_diff: self.motion_diff,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.discriminator_config().validate()?;
        if self.motion_diff && self.frames < 2 {
            return Err(Error::Config("frames must be >= 2 when motion_diff is on".into()));
        }
        for (name, v) in [("lambda_div", self.lambda_div), ("lambda_r1", self.lambda_r1)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.clip_length < self.frames {
            return Err(Error::Config(format!(
                "clip_length {} shorter than frames {}",
                self.clip_length, self.frames
            )));
        }
        if self.batch == 0 || self.max_gap == 0 || self.r1_interval == 0 {
            return Err(Error::Config("batch, max_gap and r1_interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Effective diversity weight.
    pub fn div_weight(&self) -> f64 {
        if self.use_div {
            self.lambda_div
        } else {
            0.0
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let g = &mut self.gen;
        match key {
            "resolution" => g.resolution = parse(key, v)?,
            "channels" => g.channels = parse_list(key, v)?,
            "const_channels" => g.const_channels = parse(key, v)?,
            "d_c" => g.style.d_c = parse(key, v)?,
            "mapping_layers" => g.style.mapping_layers = parse(key, v)?,
            "motion_hidden" => g.style.motion_hidden = parse_list(key, v)?,
            "k" => g.style.k = parse(key, v)?,
            "d_m" => g.style.d_m = parse(key, v)?,
            "d_h" => g.style.d_h = parse(key, v)?,
            "rank" => g.style.rank = parse(key, v)?,
            "d_v" => {
                g.style.d_v = parse(key, v)?;
                g.motion.waves = g.style.d_v;
            }
            "head_std" => g.style.head_std = parse(key, v)?,
            "d_z" => g.motion.d_z = parse(key, v)?,
            "motion_conv_layers" => g.motion.conv_layers = parse(key, v)?,
            "motion_kernel" => g.motion.kernel = parse(key, v)?,
            "anchor_spacing" => g.motion.anchor_spacing = parse(key, v)?,
            "strategy" => g.strategy = v.parse()?,
            "demod" => g.demod = parse_bool(key, v)?,
            "disc_channels" => self.disc_channels = parse_list(key, v)?,
            "disc_head_channels" => self.disc_head_channels = parse(key, v)?,
            "d_g" => self.d_g = parse(key, v)?,
            "time_freqs" => self.time_freqs = parse(key, v)?,
            "motion_diff" => self.motion_diff = parse_bool(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "lr_g" => self.lr_g = parse(key, v)?,
            "lr_d" => self.lr_d = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "use_div" => self.use_div = parse_bool(key, v)?,
            "lambda_div" => self.lambda_div = parse(key, v)?,
            "div_identity_target" => self.div_identity_target = parse_bool(key, v)?,
            "lambda_r1" => self.lambda_r1 = parse(key, v)?,
            "r1_interval" => self.r1_interval = parse(key, v)?,
            "max_gap" => self.max_gap = parse(key, v)?,
            "clip_length" => self.clip_length = parse(key, v)?,
            "model_seed" => self.model_seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "dataset" => self.dataset = v.parse()?,
            "dataset_size" => self.dataset_size = parse(key, v)?,
            "manifest" => self.manifest = v.to_string(),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "dtype" => {
                self.dtype = match v {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(Error::Config(format!("invalid dtype `{v}` (expected f32 or f64)"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let g = &self.gen;
        let pairs: Vec<(&str, String)> = vec![
            ("resolution", g.resolution.to_string()),
            ("channels", list(&g.channels)),
            ("const_channels", g.const_channels.to_string()),
            ("d_c", g.style.d_c.to_string()),
            ("mapping_layers", g.style.mapping_layers.to_string()),
            ("motion_hidden", list(&g.style.motion_hidden)),
            ("k", g.style.k.to_string()),
            ("d_m", g.style.d_m.to_string()),
            ("d_h", g.style.d_h.to_string()),
            ("rank", g.style.rank.to_string()),
            ("d_v", g.style.d_v.to_string()),
            ("head_std", g.style.head_std.to_string()),
            ("d_z", g.motion.d_z.to_string()),
            ("motion_conv_layers", g.motion.conv_layers.to_string()),
            ("motion_kernel", g.motion.kernel.to_string()),
            ("anchor_spacing", g.motion.anchor_spacing.to_string()),
            ("strategy", g.strategy.to_string()),
            ("demod", g.demod.to_string()),
            ("disc_channels", list(&self.disc_channels)),
            ("disc_head_channels", self.disc_head_channels.to_string()),
            ("d_g", self.d_g.to_string()),
            ("time_freqs", self.time_freqs.to_string()),
            ("motion_diff", self.motion_diff.to_string()),
            ("frames", self.frames.to_string()),
            ("batch", self.batch.to_string()),
            ("steps", self.steps.to_string()),
            ("lr_g", self.lr_g.to_string()),
            ("lr_d", self.lr_d.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("use_div", self.use_div.to_string()),
            ("lambda_div", self.lambda_div.to_string()),
            ("div_identity_target", self.div_identity_target.to_string()),
            ("lambda_r1", self.lambda_r1.to_string()),
            ("r1_interval", self.r1_interval.to_string()),
            ("max_gap", self.max_gap.to_string()),
            ("clip_length", self.clip_length.to_string()),
            ("model_seed", self.model_seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("dataset", self.dataset.to_string()),
            ("dataset_size", self.dataset_size.to_string()),
            ("manifest", self.manifest.clone()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("dtype", self.dtype.name().to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
