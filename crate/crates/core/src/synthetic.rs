//! Procedural videos of moving, oscillating and blinking shapes.
//!
//! Coordinates are normalized to `[0, 1]` with `x` to the right and `y`
//! downwards; time is measured in frames.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::networks::{VideoClip, IMG_CHANNELS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CLIP_LENGTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Disc { radius: f64 },
    /// Axis-aligned rectangle with half extents.
    Bar { half_w: f64, half_h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Program {
    Translate { vx: f64, vy: f64 },
    Oscillate { axis: Axis, amplitude: f64, period: f64 },
    /// Visible while `(t mod period) / period < duty`.
    Blink { period: f64, duty: f64 },
}

impl Program {
    pub fn name(&self) -> &'static str {
        match self {
            Program::Translate { .. } => "translate",
            Program::Oscillate { .. } => "oscillate",
            Program::Blink { .. } => "blink",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub shape: ShapeKind,
    pub x: f64,
    pub y: f64,
    pub color: [f64; 3],
    pub program: Program,
}

impl Entity {
    /// Extent from the center to the edge along x and y.
    fn half_extent(&self) -> (f64, f64) {
        match self.shape {
            ShapeKind::Disc { radius } => (radius, radius),
            ShapeKind::Bar { half_w, half_h } => (half_w, half_h),
        }
    }

    /// Center at time `t`, clamped so the entity stays inside the frame.
    pub fn position(&self, t: f64) -> (f64, f64) {
        let (x, y) = match self.program {
            Program::Translate { vx, vy } => (self.x + vx * t, self.y + vy * t),
            Program::Oscillate { axis, amplitude, period } => {
                let d = amplitude * (2.0 * std::f64::consts::PI * t / period).sin();
                match axis {
                    Axis::X => (self.x + d, self.y),
                    Axis::Y => (self.x, self.y + d),
                }
            }
            Program::Blink { .. } => (self.x, self.y),
        };
        let (hx, hy) = self.half_extent();
        (x.clamp(hx, 1.0 - hx), y.clamp(hy, 1.0 - hy))
    }

    pub fn visible(&self, t: f64) -> bool {
        match self.program {
            Program::Blink { period, duty } => t.rem_euclid(period) / period < duty,
            _ => true,
        }
    }

    fn covers(&self, cx: f64, cy: f64, px: f64, py: f64) -> bool {
        match self.shape {
            ShapeKind::Disc { radius } => {
                let (dx, dy) = (px - cx, py - cy);
                dx * dx + dy * dy <= radius * radius
            }
            ShapeKind::Bar { half_w, half_h } => (px - cx).abs() <= half_w && (py - cy).abs() <= half_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub resolution: usize,
    pub background: [f64; 3],
    pub entities: Vec<Entity>,
}

impl SceneSpec {
    /// Frame `(3, R, R)` in [−1, 1] with 2×2 supersampling.
    pub fn render_frame<T: Scalar>(&self, t: f64) -> Result<Tensor<T>> {
        if !(t >= 0.0) {
            return Err(Error::Invalid(format!("render time must be >= 0, got {t}")));
        }
        let r = self.resolution;
        let placed: Vec<(&Entity, f64, f64)> = self
            .entities
            .iter()
            .filter(|e| e.visible(t))
            .map(|e| {
                let (x, y) = e.position(t);
                (e, x, y)
            })
            .collect();
        let mut out = vec![0.0f64; IMG_CHANNELS * r * r];
        let inv = 1.0 / r as f64;
        for row in 0..r {
            for col in 0..r {
                let mut acc = [0.0f64; 3];
                for (sy, sx) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                    let (px, py) = ((col as f64 + sx) * inv, (row as f64 + sy) * inv);
                    let mut c = self.background;
                    for (e, x, y) in &placed {
                        if e.covers(*x, *y, px, py) {
                            c = e.color;
                        }
                    }
                    for k in 0..3 {
                        acc[k] += 0.25 * c[k];
                    }
                }
                for k in 0..3 {
                    out[(k * r + row) * r + col] = acc[k].clamp(-1.0, 1.0);
                }
            }
        }
        Tensor::from_f64(&[IMG_CHANNELS, r, r], &out)
    }

    /// Clip `(N, 3, R, R)` at the given times.
    pub fn render_clip<T: Scalar>(&self, times: &[f64]) -> Result<VideoClip<T>> {
        let frames: Vec<Tensor<T>> = times
            .iter()
            .map(|&t| self.render_frame::<T>(t).and_then(|f| f.reshape(&[1, IMG_CHANNELS, self.resolution, self.resolution])))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<T>> = frames.iter().collect();
        VideoClip::new(Tensor::concat(&refs, 0)?, times.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    SingleMotion,
    TwoMotion,
    ThreeMotion,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-motion" => Ok(DatasetKind::SingleMotion),
            "two-motion" => Ok(DatasetKind::TwoMotion),
            "three-motion" => Ok(DatasetKind::ThreeMotion),
            other => Err(Error::Config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::SingleMotion => "single-motion",
            DatasetKind::TwoMotion => "two-motion",
            DatasetKind::ThreeMotion => "three-motion",
        })
    }
}

/// Sampling ranges for entity parameters.
pub mod ranges {
    /// Speed in frame widths per frame.
    pub const SPEED: (f64, f64) = (0.003, 0.008);
    pub const BLINK_PERIOD: (f64, f64) = (8.0, 24.0);
    pub const OSC_PERIOD: (f64, f64) = (12.0, 40.0);
    pub const OSC_AMPLITUDE: (f64, f64) = (0.08, 0.2);
    pub const RADIUS: (f64, f64) = (0.08, 0.14);
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let mut c = [0.0; 3];
    // bright, saturated-ish colors on a dark background
    for v in c.iter_mut() {
        *v = rng.random_range(-0.2..1.0);
    }
    c[rng.random_range(0..3)] = 1.0;
    c
}

fn disc<R: Rng + ?Sized>(rng: &mut R, program: Program) -> Entity {
    let radius = uniform(rng, ranges::RADIUS);
    let (x, y) = base_position(rng, radius, radius, &program);
    Entity {
        shape: ShapeKind::Disc { radius },
        x,
        y,
        color: color(rng),
        program,
    }
}

/// Base position keeping the whole clip's path inside the frame.
fn base_position<R: Rng + ?Sized>(rng: &mut R, hx: f64, hy: f64, program: &Program) -> (f64, f64) {
    let span = CLIP_LENGTH as f64;
    let (lo_x, hi_x, lo_y, hi_y) = match *program {
        Program::Translate { vx, vy } => {
            let (dx, dy) = (vx * span, vy * span);
            (hx - dx.min(0.0), 1.0 - hx - dx.max(0.0), hy - dy.min(0.0), 1.0 - hy - dy.max(0.0))
        }
        Program::Oscillate { axis, amplitude, .. } => {
            let (ax, ay) = if axis == Axis::X { (amplitude, 0.0) } else { (0.0, amplitude) };
            (hx + ax, 1.0 - hx - ax, hy + ay, 1.0 - hy - ay)
        }
        Program::Blink { .. } => (hx, 1.0 - hx, hy, 1.0 - hy),
    };
    let pick = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { 0.5 * (lo + hi) };
    (pick(rng, lo_x, hi_x), pick(rng, lo_y, hi_y))
}

fn translate<R: Rng + ?Sized>(rng: &mut R) -> Program {
    let speed = uniform(rng, ranges::SPEED);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    Program::Translate {
        vx: speed * angle.cos(),
        vy: speed * angle.sin(),
    }
}

fn blink<R: Rng + ?Sized>(rng: &mut R) -> Program {
    Program::Blink {
        period: uniform(rng, ranges::BLINK_PERIOD).round(),
        duty: 0.5,
    }
}

fn oscillate<R: Rng + ?Sized>(rng: &mut R) -> Program {
    Program::Oscillate {
        axis: if rng.random_bool(0.5) { Axis::X } else { Axis::Y },
        amplitude: uniform(rng, ranges::OSC_AMPLITUDE),
        period: uniform(rng, ranges::OSC_PERIOD),
    }
}

pub fn make_dataset(kind: DatasetKind, count: usize, resolution: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    if count == 0 {
        return Err(Error::Invalid("dataset needs at least one scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let g = rng.random_range(-0.8..-0.4);
        let background = [g, g + rng.random_range(-0.1..0.1), g + rng.random_range(-0.1..0.1)];
        let mut entities = Vec::new();
        match kind {
            DatasetKind::SingleMotion => {
                let program = match rng.random_range(0..3) {
                    0 => translate(&mut rng),
                    1 => oscillate(&mut rng),
                    _ => blink(&mut rng),
                };
                entities.push(disc(&mut rng, program));
            }
            DatasetKind::TwoMotion | DatasetKind::ThreeMotion => {
                let p = translate(&mut rng);
                entities.push(disc(&mut rng, p));
                let p = blink(&mut rng);
                entities.push(disc(&mut rng, p));
                if kind == DatasetKind::ThreeMotion {
                    let program = oscillate(&mut rng);
                    let (half_w, half_h) = if rng.random_bool(0.5) { (0.2, 0.04) } else { (0.04, 0.2) };
                    let (x, y) = base_position(&mut rng, half_w, half_h, &program);
                    entities.push(Entity {
                        shape: ShapeKind::Bar { half_w, half_h },
                        x,
                        y,
                        color: color(&mut rng),
                        program,
                    });
                }
            }
        }
        specs.push(SceneSpec {
            resolution,
            background,
            entities,
        });
    }
    Ok(specs)
}

// Manifest grammar, one scene per line:
//   res=<n> bg=<r>,<g>,<b> entity=<field>;<field>;... [entity=...]
// entity fields (all key:value):
//   shape:disc|bar  r:<radius>  hw:<half_w>  hh:<half_h>  pos:<x>,<y>  color:<r>,<g>,<b>
//   prog:translate  v:<vx>,<vy>
//   prog:oscillate  axis:x|y  amp:<a>  period:<p>
//   prog:blink      period:<p>  duty:<d>

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "res={} bg={}", self.resolution, fmt_list(&self.background))?;
        for e in &self.entities {
            let shape = match e.shape {
                ShapeKind::Disc { radius } => format!("shape:disc;r:{radius}"),
                ShapeKind::Bar { half_w, half_h } => format!("shape:bar;hw:{half_w};hh:{half_h}"),
            };
            let prog = match e.program {
                Program::Translate { vx, vy } => format!("prog:translate;v:{vx},{vy}"),
                Program::Oscillate { axis, amplitude, period } => format!(
                    "prog:oscillate;axis:{};amp:{amplitude};period:{period}",
                    if axis == Axis::X { "x" } else { "y" }
                ),
                Program::Blink { period, duty } => format!("prog:blink;period:{period};duty:{duty}"),
            };
            write!(f, " entity={shape};pos:{},{};color:{};{prog}", e.x, e.y, fmt_list(&e.color))?;
        }
        Ok(())
    }
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad number list for {what}: `{s}`")))?;
    if v.len() != n {
        return Err(Error::Config(format!("{what} needs {n} values, got `{s}`")));
    }
    Ok(v)
}

fn parse_entity(s: &str) -> Result<Entity> {
    let mut fields = std::collections::HashMap::new();
    for part in s.split(';') {
        let (k, v) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("entity field `{part}` is not key:value")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Config(format!("entity missing `{k}`")));
    let num = |k: &str| -> Result<f64> { Ok(parse_floats(get(k)?, 1, k)?[0]) };
    let shape = match get("shape")? {
        "disc" => ShapeKind::Disc { radius: num("r")? },
        "bar" => ShapeKind::Bar {
            half_w: num("hw")?,
            half_h: num("hh")?,
        },
        other => return Err(Error::Config(format!("unknown shape `{other}`"))),
    };
    let pos = parse_floats(get("pos")?, 2, "pos")?;
    let c = parse_floats(get("color")?, 3, "color")?;
    let program = match get("prog")? {
        "translate" => {
            let v = parse_floats(get("v")?, 2, "v")?;
            Program::Translate { vx: v[0], vy: v[1] }
        }
        "oscillate" => Program::Oscillate {
            axis: match get("axis")? {
                "x" => Axis::X,
                "y" => Axis::Y,
                other => return Err(Error::Config(format!("unknown axis `{other}`"))),
            },
            amplitude: num("amp")?,
            period: num("period")?,
        },
        "blink" => Program::Blink {
            period: num("period")?,
            duty: num("duty")?,
        },
        other => return Err(Error::Config(format!("unknown program `{other}`"))),
    };
    Ok(Entity {
        shape,
        x: pos[0],
        y: pos[1],
        color: [c[0], c[1], c[2]],
        program,
    })
}

impl FromStr for SceneSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut resolution = None;
        let mut background = None;
        let mut entities = Vec::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest token `{tok}` is not key=value")))?;
            match k {
                "res" => {
                    resolution = Some(v.parse().map_err(|_| Error::Config(format!("bad resolution `{v}`")))?)
                }
                "bg" => {
                    let c = parse_floats(v, 3, "bg")?;
                    background = Some([c[0], c[1], c[2]]);
                }
                "entity" => entities.push(parse_entity(v)?),
                other => return Err(Error::Config(format!("unknown manifest key `{other}`"))),
            }
        }
        Ok(SceneSpec {
            resolution: resolution.ok_or_else(|| Error::Config("manifest line missing res".into()))?,
            background: background.ok_or_else(|| Error::Config("manifest line missing bg".into()))?,
            entities,
        })
    }
}

pub fn write_manifest(specs: &[SceneSpec]) -> String {
    let mut s = String::from("# res=<n> bg=<r,g,b> entity=<key:value;...> ...\n");
    for spec in specs {
        s.push_str(&spec.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<SceneSpec>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}
