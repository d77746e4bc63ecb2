//! Finite-difference suite behind the `gradcheck` command.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, grad_check_at, GradCheckReport, Graph, Var};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::hypernet::LayerShape;
use crate::modconv::{ModConv, Strategy};
use crate::params::{ParamStore, Session};
use crate::tensor::Tensor;
use crate::training::{adversarial_losses, diversity_loss, r1_penalty, TrainState};

pub const SUITE_EPS: f64 = 1e-4;
pub const SUITE_TOL: f64 = 1e-4;
/// Candidate elements probed per parameter tensor in the full scope.
pub const FULL_SAMPLES: usize = 24;
/// Step sizes tried in order when every probe at the previous one crossed a kink.
pub const FALLBACK_EPS: [f64; 3] = [SUITE_EPS, 1e-5, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Layer,
    Full,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "layer" => Ok(Scope::Layer),
            "full" => Ok(Scope::Full),
            _ => Err(Error::Config(format!("unknown gradcheck scope `{s}` (ops, layer, full)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.cases.iter().all(|c| c.report.passes(tol))
    }

    pub fn checked(&self) -> usize {
        self.cases.iter().map(|c| c.report.checked).sum()
    }

    fn push(&mut self, name: impl Into<String>, report: GradCheckReport) {
        self.cases.push(CaseResult {
            name: name.into(),
            report,
        });
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            writeln!(
                f,
                "{:<40} max_rel_error {:.3e}  checked {}  skipped {}",
                c.name, c.report.max_rel_error, c.report.checked, c.report.skipped
            )?;
        }
        Ok(())
    }
}

fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Reduces `y` to a scalar with a fixed random weighting.
fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rnd(g.shape(y), seed));
    g.dot(y, w)
}

type UnaryCase = (&'static str, fn(&mut Graph<f64>, Var) -> Result<Var>, Tensor<f64>);

fn op_cases() -> Vec<UnaryCase> {
    let pos = rnd(&[3, 4], 2).map(|v| v.abs() + 0.5);
    vec![
        ("add", |g, x| {
            let c = g.constant(rnd(&[4], 3));
            g.add(x, c)
        }, rnd(&[3, 4], 1)),
        ("sub", |g, x| {
            let c = g.constant(rnd(&[3, 1], 3));
            g.sub(c, x)
        }, rnd(&[3, 4], 1)),
        ("mul", |g, x| g.mul(x, x), rnd(&[3, 4], 1)),
        ("scale", |g, x| g.scale(x, -1.7), rnd(&[3, 4], 1)),
        ("add_scalar", |g, x| g.add_scalar(x, 0.3), rnd(&[3, 4], 1)),
        ("abs", |g, x| g.abs(x), rnd(&[3, 4], 1)),
        ("sqrt", |g, x| g.sqrt(x), pos.clone()),
        ("rsqrt", |g, x| g.rsqrt(x), pos.clone()),
        ("recip", |g, x| g.recip(x), pos),
        ("exp", |g, x| g.exp(x), rnd(&[3, 4], 1)),
        ("sin", |g, x| g.sin(x), rnd(&[3, 4], 1)),
        ("cos", |g, x| g.cos(x), rnd(&[3, 4], 1)),
        ("tanh", |g, x| g.tanh(x), rnd(&[3, 4], 1)),
        ("sigmoid", |g, x| g.sigmoid(x), rnd(&[3, 4], 1)),
        ("softplus", |g, x| g.softplus(x), rnd(&[3, 4], 1)),
        ("leaky_relu", |g, x| g.leaky_relu(x, 0.2), rnd(&[3, 4], 1)),
        ("square", |g, x| g.square(x), rnd(&[3, 4], 1)),
        ("matmul", |g, x| {
            let c = g.constant(rnd(&[4, 2], 5));
            g.matmul(x, c)
        }, rnd(&[3, 4], 1)),
        ("transpose", |g, x| g.transpose(x), rnd(&[3, 4], 1)),
        ("reshape", |g, x| g.reshape(x, &[2, 6]), rnd(&[3, 4], 1)),
        ("broadcast_to", |g, x| g.broadcast_to(x, &[2, 3, 4]), rnd(&[3, 1], 1)),
        ("sum_to", |g, x| g.sum_to(x, &[1, 4]), rnd(&[2, 3, 4], 1)),
        ("sum_axis", |g, x| g.sum_axis(x, 1, false), rnd(&[2, 3, 4], 1)),
        ("mean_axis", |g, x| g.mean_axis(x, 2, true), rnd(&[2, 3, 4], 1)),
        ("softmax", |g, x| g.softmax(x, 1), rnd(&[3, 5], 1)),
        ("concat", |g, x| {
            let c = g.constant(rnd(&[3, 2], 6));
            g.concat(&[x, c, x], 1)
        }, rnd(&[3, 4], 1)),
        ("slice", |g, x| g.slice(x, 1, 1, 2), rnd(&[3, 4], 1)),
        ("pad_axis", |g, x| g.pad_axis(x, 0, 1, 6), rnd(&[3, 4], 1)),
        ("conv2d", |g, x| {
            let w = g.constant(rnd(&[2, 3, 3, 3], 7));
            g.conv2d(x, w, (1, 1))
        }, rnd(&[2, 3, 5, 4], 1)),
        ("conv2d_kernel", |g, w| {
            let x = g.constant(rnd(&[2, 3, 5, 4], 8));
            g.conv2d(x, w, (1, 0))
        }, rnd(&[2, 3, 3, 3], 1)),
        ("conv1d", |g, x| {
            let w = g.constant(rnd(&[2, 3, 5], 9));
            g.conv1d(x, w, 2)
        }, rnd(&[1, 3, 7], 1)),
        ("upsample2x", |g, x| g.upsample2x(x), rnd(&[1, 2, 3, 3], 1)),
        ("avgpool2x", |g, x| g.avgpool2x(x), rnd(&[1, 2, 4, 4], 1)),
        ("conv_transpose2d", |g, x| {
            let w = g.constant(rnd(&[2, 3, 3, 3], 10));
            g.conv_transpose2d(x, w)
        }, rnd(&[1, 2, 3, 3], 1)),
        // gradient of an inner leaf, differentiated again with respect to x
        ("second_order", |g, x| {
            let c = g.leaf(rnd(&[4], 4));
            let y = g.mul(x, c)?;
            let y = g.tanh(y)?;
            let y = g.square(y)?;
            let s = g.sum(y)?;
            let gc = g.grad(s, &[c])?[0];
            g.sin(gc)
        }, rnd(&[3, 4], 1)),
    ]
}

fn ops_suite(report: &mut SuiteReport, fault: Option<&'static str>) -> Result<()> {
    for (i, (name, f, x)) in op_cases().into_iter().enumerate() {
        let r = grad_check(
            |g, v| {
                if let Some(op) = fault {
                    g.inject_sign_flip(op);
                }
                let y = f(g, v)?;
                weighted(g, y, 100 + i as u64)
            },
            &x,
            SUITE_EPS,
        )?;
        report.push(format!("op/{name}"), r);
    }
    Ok(())
}

fn layer_suite(report: &mut SuiteReport, fault: Option<&'static str>) -> Result<()> {
    let shape = LayerShape::new(3, 2, 3, 3);
    for strategy in [Strategy::ContentFirst, Strategy::MotionFirst] {
        let mut store = ParamStore::<f64>::new();
        let conv = ModConv::new(&mut store, 0, shape, true, &mut ChaCha8Rng::seed_from_u64(11));
        let x = rnd(&[1, 2, 5, 5], 12);
        let style = rnd(&[2], 13).map(|v| v + 1.0);
        let m = rnd(&[4, 18], 14).map(|v| 1.0 + 0.3 * v);
        let run = |s: &mut Session<'_, f64>, xv: Var, sv: Var, mv: Var| -> Result<Var> {
            if let Some(op) = fault {
                s.graph.inject_sign_flip(op);
            }
            let (y, rec) = conv.forward(s, xv, sv, mv, strategy)?;
            let a = weighted(&mut s.graph, y, 15)?;
            let b = weighted(&mut s.graph, rec.logits, 16)?;
            s.graph.add(a, b)
        };
        let inputs = [("input", &x), ("content_style", &style), ("motion_styles", &m)];
        for (slot, (what, value)) in inputs.iter().enumerate() {
            let r = grad_check(
                |g, p| {
                    Session::scoped(&store, g, |s| {
                        let mut vars = [x.clone(), style.clone(), m.clone()].map(|t| s.graph.constant(t));
                        vars[slot] = p;
                        run(s, vars[0], vars[1], vars[2])
                    })
                },
                value,
                SUITE_EPS,
            )?;
            report.push(format!("modconv/{strategy}/{what}"), r);
        }
        let w = store.value(conv.weight).clone();
        let r = grad_check(
            |g, p| {
                Session::scoped(&store, g, |s| {
                    s.bind(conv.weight, p)?;
                    let [xv, sv, mv] = [x.clone(), style.clone(), m.clone()].map(|t| s.graph.constant(t));
                    run(s, xv, sv, mv)
                })
            },
            &w,
            SUITE_EPS,
        )?;
        report.push(format!("modconv/{strategy}/weight"), r);
    }
    Ok(())
}

/// Gives the zero-initialized discriminator head weights so gradients reach
/// every module.
/// Moves the model off its initialisation, where zero biases put whole
/// activation maps exactly on a leaky-relu kink and the zero head blocks
/// every gradient into the generator.
fn generic_point(state: &mut TrainState<f64>) {
    let id = state.discriminator.head_out.weight;
    let shape = state.store.value(id).shape().to_vec();
    *state.store.value_mut(id) = rnd(&shape, 31).map(|v| 0.5 * v);
    let ids: Vec<_> = state.store.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        if state.store.entry(id).name.ends_with(".bias") {
            let v = state.store.value(id);
            let jitter = rnd(v.shape(), 100 + i as u64);
            *state.store.value_mut(id) = v
                .zip_map(&jitter, "jitter", |a, b| a + 0.05 * b)
                .expect("same shape");
        }
    }
}

fn full_suite(report: &mut SuiteReport, fault: Option<&'static str>, k: usize) -> Result<()> {
    let mut cfg = TrainConfig::gradcheck_preset(k);
    cfg.batch = 1;
    let mut state = TrainState::<f64>::new(cfg)?;
    generic_point(&mut state);
    let fake = state.sample_fake()?;
    let (real, rtimes) = state.sample_real()?;
    let st = &state;
    let objective = |s: &mut Session<'_, f64>| -> Result<Var> {
        if let Some(op) = fault {
            s.graph.inject_sign_flip(op);
        }
        let z = s.graph.constant(fake.z_c.clone());
        let out = st.generator.generate(s, z, &fake.track, &fake.times)?;
        let lf = st.discriminator.clip_logit(s, out.frames, &fake.times)?;
        let xr = s.graph.leaf(real.clone());
        let lr = st.discriminator.clip_logit(s, xr, &rtimes)?;
        let (ld, lg) = adversarial_losses(&mut s.graph, lr, lf)?;
        let r1 = r1_penalty(&mut s.graph, lr, xr)?;
        let div = diversity_loss(&mut s.graph, &out.records, st.cfg.div_identity_target)?;
        let a = s.graph.add(ld, lg)?;
        let b = s.graph.add(r1, div)?;
        s.graph.add(a, b)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for id in st.store.ids() {
        let entry = st.store.entry(id);
        let n = entry.value.len();
        let idx = sample(&mut rng, n, FULL_SAMPLES.min(n)).into_vec();
        for eps in FALLBACK_EPS {
            let r = grad_check_at(
                |g, p| {
                    Session::scoped(&st.store, g, |s| {
                        s.bind(id, p)?;
                        objective(s)
                    })
                },
                &entry.value,
                eps,
                &idx,
            )?;
            if r.checked > 0 || eps == FALLBACK_EPS[2] {
                let name = if eps == SUITE_EPS {
                    format!("full/{}", entry.name)
                } else {
                    format!("full/{} (eps {eps:e})", entry.name)
                };
                report.push(name, r);
                break;
            }
        }
    }
    Ok(())
}

/// Runs `scope` with `k` motion styles in the full model; `fault` negates one
/// op's backward rule as a negative control.
pub fn run(scope: Scope, k: usize, fault: Option<&'static str>) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    match scope {
        Scope::Ops => ops_suite(&mut report, fault)?,
        Scope::Layer => layer_suite(&mut report, fault)?,
        Scope::Full => full_suite(&mut report, fault, k)?,
    }
    Ok(report)
}
