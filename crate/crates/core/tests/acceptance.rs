//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Criteria 7 to 9 train six toy models and take roughly half an hour on one core.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mostgan::analysis::{
    attention_trajectory, clip_frechet, eval_latents, frechet_distance, generate_clips, mean_abs_off_diagonal,
    motion_style_cosine, real_clips, FeatureStats, DEFAULT_EMBED_SEED,
};
use mostgan::params::Session;
use mostgan::bench;
use mostgan::checkpoint::{from_bytes, to_bytes};
use mostgan::cli::cmd_train;
use mostgan::config::TrainConfig;
use mostgan::gradsuite::{self, Scope};
use mostgan::hypernet::{lowrank_reconstruct, lowrank_reconstruct_graph, LayerShape};
use mostgan::modconv::{ModConv, Strategy};
use mostgan::networks::{frame_differences, Discriminator, DiscriminatorConfig, VideoClip};
use mostgan::params::ParamStore;
use mostgan::training::{diversity_loss, diversity_loss_logits, TrainState};
use mostgan::{Graph, Tensor};

const TOY_CONFIG: &str = include_str!("../../../configs/toy32.txt");
const EVAL_SEED: u64 = 99;
const SEED_PAIRS: [u64; 3] = [0, 1, 2];

type Outcome = (bool, String);

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_gradient_suite() -> Outcome {
    let t = Instant::now();
    let report = gradsuite::run(Scope::Full, 4, None).expect("suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = report.worst().expect("cases");
    let covered = report.cases.iter().all(|c| c.report.checked > 0);
    (
        report.passes(1e-4) && covered && secs < 300.0,
        format!(
            "{} parameter tensors, worst {} at {:.2e}, all covered: {covered}, {secs:.1}s",
            report.cases.len(),
            worst.name,
            worst.report.max_rel_error
        ),
    )
}

/// `out[i,h,w] = Σ_r v1[r,i]·v2[r,h]·v3[r,w]`, written out directly.
fn triple_loop(style: &[f64], rank: usize, c_in: usize, kh: usize, kw: usize) -> Vec<f64> {
    let l = c_in + kh + kw;
    let mut out = vec![0.0; c_in * kh * kw];
    for i in 0..c_in {
        for h in 0..kh {
            for w in 0..kw {
                let mut acc = 0.0;
                for r in 0..rank {
                    let row = &style[r * l..(r + 1) * l];
                    acc += row[i] * row[c_in + h] * row[c_in + kh + w];
                }
                out[(i * kh + h) * kw + w] = acc;
            }
        }
    }
    out
}

fn c2_lowrank_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let c_in = rng.random_range(1..=16);
        let kh = rng.random_range(1..=5);
        let kw = rng.random_range(1..=5);
        let rank = rng.random_range(1..=4);
        let l = c_in + kh + kw;
        let style = randn(&[rank, l], 1000 + case);
        let oracle = triple_loop(style.data(), rank, c_in, kh, kw);
        let direct = lowrank_reconstruct(&style, c_in, kh, kw).unwrap();
        worst = worst.max(max_abs_diff(direct.data(), &oracle));
        let mut g = Graph::<f64>::new();
        let sv = g.constant(style.reshape(&[1, rank, l]).unwrap());
        let m = lowrank_reconstruct_graph(&mut g, sv, LayerShape::new(1, c_in, kh, kw)).unwrap();
        worst = worst.max(max_abs_diff(g.value(m).data(), &oracle));
    }
    let secs = t.elapsed().as_secs_f64();
    (worst <= 1e-10 && secs < 10.0, format!("100 cases, max |diff| {worst:.2e}, {secs:.3}s"))
}

fn c3_bench() -> Outcome {
    let r = bench::run::<f32>(LayerShape::new(512, 512, 3, 3), 128, 1, 8, 10).expect("bench runs");
    println!("{r}");
    (
        r.lowrank_params == 66_304 && r.fullrank_params == 301_989_888 && r.lowrank.mean_ms < r.fullrank.mean_ms,
        format!(
            "counts {} / {}, lowrank {:.2} ms vs fullrank {:.2} ms",
            r.lowrank_params, r.fullrank_params, r.lowrank.mean_ms, r.fullrank.mean_ms
        ),
    )
}

/// Output of one modulated layer on constants.
fn modconv_out(conv: &ModConv, store: &ParamStore<f64>, x: &Tensor<f64>, s: &Tensor<f64>, m: &Tensor<f64>, strat: Strategy) -> (Tensor<f64>, Tensor<f64>) {
    let mut sess = Session::frozen(store);
    let xv = sess.graph.constant(x.clone());
    let sv = sess.graph.constant(s.clone());
    let mv = sess.graph.constant(m.clone());
    let (y, rec) = conv.forward(&mut sess, xv, sv, mv, strat).unwrap();
    (sess.graph.value(y).clone(), sess.graph.value(rec.logits).clone())
}

/// `W ⊙ s ⊙ M`, optional demodulation, zero-padded convolution, bias, scaled leaky-relu.
fn direct_modulation(w: &Tensor<f64>, b: &[f64], x: &Tensor<f64>, s: &[f64], m: &[f64], demod: bool) -> Vec<f64> {
    let [c_out, c_in, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let (h, wd) = (x.shape()[2], x.shape()[3]);
    let d = c_in * kh * kw;
    let mut wm = vec![0.0; c_out * d];
    for o in 0..c_out {
        for j in 0..d {
            wm[o * d + j] = w.data()[o * d + j] * s[j / (kh * kw)] * m[j];
        }
        if demod {
            let norm = (wm[o * d..(o + 1) * d].iter().map(|v| v * v).sum::<f64>() + 1e-8).sqrt();
            wm[o * d..(o + 1) * d].iter_mut().for_each(|v| *v /= norm);
        }
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; c_out * h * wd];
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[o];
                for i in 0..c_in {
                    for u in 0..kh {
                        for v in 0..kw {
                            let (yy, xs) = (y + u, xx + v);
                            if yy < ph || xs < pw || yy - ph >= h || xs - pw >= wd {
                                continue;
                            }
                            acc += wm[o * d + (i * kh + u) * kw + v] * x.data()[(i * h + yy - ph) * wd + xs - pw];
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = if acc >= 0.0 { acc } else { 0.2 * acc } * std::f64::consts::SQRT_2;
            }
        }
    }
    out
}

fn c4_k1_degeneracy() -> Outcome {
    let mut worst: f64 = 0.0;
    for (case, demod) in [(0u64, true), (1, false), (2, true), (3, false)] {
        let shape = LayerShape::new(4, 3, 3, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(40 + case);
        let conv = ModConv::new(&mut store, 0, shape, demod, &mut rng);
        *store.value_mut(conv.bias) = randn(&[4], 50 + case);
        let x = randn(&[1, 3, 6, 5], 60 + case);
        let s = randn(&[3], 70 + case);
        let m = randn(&[1, shape.fan_in()], 80 + case);
        let w = store.value(conv.weight).clone();
        let b = store.value(conv.bias).data().to_vec();
        let expect = direct_modulation(&w, &b, &x, s.data(), m.data(), demod);
        for strat in [Strategy::ContentFirst, Strategy::MotionFirst] {
            let (y, _) = modconv_out(&conv, &store, &x, &s, &m, strat);
            worst = worst.max(max_abs_diff(y.data(), &expect));
        }
    }
    (worst <= 1e-10, format!("4 layers x 2 strategies, max |diff| {worst:.2e}"))
}

fn permute_rows(m: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let d = m.shape()[1];
    let data: Vec<f64> = perm.iter().flat_map(|&p| m.data()[p * d..(p + 1) * d].iter().copied()).collect();
    Tensor::new(m.shape().to_vec(), data).unwrap()
}

fn ldiv_value(logits: &[Vec<Tensor<f64>>], identity: bool) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Vec<_>> = logits.iter().map(|f| f.iter().map(|a| g.constant(a.clone())).collect()).collect();
    let l = diversity_loss_logits(&mut g, &vars, identity).unwrap();
    g.value(l).item()
}

fn c5_invariants() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut worst_sum: f64 = 0.0;
    for (case, scale) in [1.0, 30.0, 700.0].into_iter().enumerate() {
        let a = randn(&[16, 9], 90 + case as u64).map(|v| v * scale);
        let p = a.softmax(1).unwrap();
        let mut g = Graph::<f64>::new();
        let av = g.constant(a.clone());
        let pv = g.softmax(av, 1).unwrap();
        for sm in [p.data(), g.value(pv).data()] {
            for row in sm.chunks(9) {
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    ok &= worst_sum <= 1e-12;
    notes.push(format!("softmax |Σ-1| {worst_sum:.1e}"));

    let shape = LayerShape::new(6, 4, 3, 3);
    let k = 5;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let conv = ModConv::new(&mut store, 0, shape, true, &mut rng);
    let x = randn(&[1, 4, 5, 5], 8);
    let s = randn(&[4], 9);
    let m = randn(&[k, shape.fan_in()], 10);
    let perm = [3, 0, 4, 1, 2];
    let mp = permute_rows(&m, &perm);
    let mut worst_out: f64 = 0.0;
    let mut worst_div: f64 = 0.0;
    for strat in [Strategy::ContentFirst, Strategy::MotionFirst] {
        let (y, a) = modconv_out(&conv, &store, &x, &s, &m, strat);
        let (yp, ap) = modconv_out(&conv, &store, &x, &s, &mp, strat);
        worst_out = worst_out.max(max_abs_diff(y.data(), yp.data()));
        for identity in [false, true] {
            let d = ldiv_value(&[vec![a.clone()]], identity);
            let dp = ldiv_value(&[vec![ap.clone()]], identity);
            worst_div = worst_div.max((d - dp).abs());
        }
    }
    ok &= worst_out <= 1e-10 && worst_div <= 1e-10;
    notes.push(format!("permutation: output {worst_out:.1e}, L_div {worst_div:.1e}"));

    let zero = ldiv_value(&vec![vec![Tensor::zeros(&[6, 4]); 3]; 2], false);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ortho = |rng: &mut ChaCha8Rng| {
        let a = DMatrix::<f64>::from_fn(7, k, |_, _| rng.random::<f64>() - 0.5);
        let q = a.qr().q();
        Tensor::from_fn(&[7, k], |i| q[(i / k, i % k)])
    };
    let frames: Vec<Vec<Tensor<f64>>> = (0..3).map(|_| (0..2).map(|_| ortho(&mut rng)).collect()).collect();
    let on = ldiv_value(&frames, false);
    let on_identity = ldiv_value(&frames, true);
    let root_k = (k as f64).sqrt();
    ok &= zero == 0.0 && (on - root_k).abs() <= 1e-12 && on_identity.abs() <= 1e-12;
    notes.push(format!("L_div zero {zero}, orthonormal {on:.15} (√K {root_k:.15})"));

    // The record path used in training agrees with the raw-logit path.
    let mut sess = Session::frozen(&store);
    let xv = sess.graph.constant(x.clone());
    let sv = sess.graph.constant(s.clone());
    let mv = sess.graph.constant(m.clone());
    let (_, rec) = conv.forward(&mut sess, xv, sv, mv, Strategy::ContentFirst).unwrap();
    let via_records = diversity_loss(&mut sess.graph, &[vec![rec]], false).unwrap();
    let a = sess.graph.value(rec.logits).clone();
    let d_rec = sess.graph.value(via_records).item();
    ok &= (d_rec - ldiv_value(&[vec![a]], false)).abs() <= 1e-12;

    (ok, notes.join("; "))
}

fn c6_motion_diff() -> Outcome {
    let n = 4;
    let mut ok = true;
    let mut notes = Vec::new();

    let frames32 = Tensor::<f32>::from_fn(&[n, 3, 8, 8], |i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0);
    let times = vec![0.0, 1.0, 3.0, 6.0];
    let clip = VideoClip::new(frames32.clone(), times.clone()).unwrap();
    let items = frame_differences(&clip).unwrap();
    let per = 3 * 8 * 8;
    let d = items.frames.data();
    let f = frames32.data();
    ok &= items.frames.shape()[0] == 2 * n - 1 && items.times.len() == 2 * n - 1;
    ok &= d[..n * per].iter().zip(f).all(|(a, b)| a.to_bits() == b.to_bits());
    let bitwise = (0..n - 1).all(|i| {
        (0..per).all(|p| d[(n + i) * per + p].to_bits() == (f[(i + 1) * per + p] - f[i * per + p]).abs().to_bits())
    });
    ok &= bitwise;
    ok &= items.times[n..] == [0.5, 2.0, 4.5];
    notes.push(format!("{} items from {n} frames, δ bitwise: {bitwise}", items.frames.shape()[0]));

    let base = DiscriminatorConfig {
        resolution: 16,
        channels: vec![4, 6],
        head_channels: 8,
        d_g: 8,
        time_freqs: 4,
        frames: n,
        motion_diff: true,
    };
    let build = |cfg: DiscriminatorConfig| {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let disc = Discriminator::new(cfg, &mut store, &mut rng).unwrap();
        (disc, store)
    };
    let (on, store_on) = build(base.clone());
    let (off, store_off) = build(DiscriminatorConfig {
        motion_diff: false,
        ..base.clone()
    });
    let frames = randn(&[n, 3, 16, 16], 12);
    let arity = |disc: &Discriminator, store: &ParamStore<f64>, count: usize| {
        let mut s = Session::frozen(store);
        let x = s.graph.constant(randn(&[count, 3, 16, 16], 13));
        let t: Vec<f64> = (0..count).map(|i| i as f64).collect();
        disc.discriminate(&mut s, x, &t).is_ok()
    };
    let accepts_on: Vec<usize> = (1..=2 * n).filter(|&c| arity(&on, &store_on, c)).collect();
    let accepts_off: Vec<usize> = (1..=2 * n).filter(|&c| arity(&off, &store_off, c)).collect();
    ok &= accepts_on == [2 * n - 1] && accepts_off == [n];
    notes.push(format!("accepted item counts on {accepts_on:?}, off {accepts_off:?}"));

    let logit = |disc: &Discriminator, store: &ParamStore<f64>| {
        let mut s = Session::frozen(store);
        let x = s.graph.constant(frames.clone());
        let l = disc.clip_logit(&mut s, x, &times).unwrap();
        s.graph.value(l).item()
    };
    ok &= logit(&on, &store_on).is_finite() && logit(&off, &store_off).is_finite();

    let mut diffs = Vec::new();
    for (a, b) in store_on.entries().iter().zip(store_off.entries()) {
        ok &= a.name == b.name;
        if a.value.shape() != b.value.shape() {
            diffs.push((a.name.clone(), a.value.shape().to_vec(), b.value.shape().to_vec()));
        }
    }
    ok &= store_on.len() == store_off.len();
    let c_e = *base.channels.last().unwrap();
    ok &= diffs.len() == 1
        && diffs[0].0 == "disc.head_conv.weight"
        && diffs[0].1[1] == (2 * n - 1) * c_e
        && diffs[0].2[1] == n * c_e;
    notes.push(format!("shape changes when toggled: {:?}", diffs.iter().map(|d| &d.0).collect::<Vec<_>>()));
    (ok, notes.join("; "))
}

struct ToyRun {
    k: usize,
    seed: u64,
    fd: f64,
    wall: Duration,
    state: TrainState<f32>,
}

fn toy_config(k: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::from_text(TOY_CONFIG).unwrap();
    cfg.set("k", &k.to_string()).unwrap();
    cfg.set("model_seed", &seed.to_string()).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn train_toy(k: usize, seed: u64) -> ToyRun {
    let cfg = toy_config(k, seed);
    let t = Instant::now();
    let mut state = TrainState::<f32>::new(cfg).unwrap();
    while state.step < state.cfg.steps {
        state.train_step().unwrap();
    }
    let wall = t.elapsed();
    let real = real_clips::<f32>(&state.scenes, 256, 8).unwrap();
    let fake = generate_clips(&state.generator, &state.store, 256, 8, EVAL_SEED).unwrap();
    let fd = clip_frechet(&fake, &real, 8, DEFAULT_EMBED_SEED).unwrap();
    println!("  trained K={k} seed={seed}: {} steps in {:.0}s, toy Fréchet {fd:.4}", state.step, wall.as_secs_f64());
    ToyRun { k, seed, fd, wall, state }
}

fn c7_toy_training(runs: &[(ToyRun, ToyRun)]) -> Outcome {
    let wins = runs.iter().filter(|(k8, k1)| k8.fd <= k1.fd).count();
    let slowest = runs.iter().flat_map(|(a, b)| [a.wall, b.wall]).max().unwrap();
    let steps = runs[0].0.state.step;
    let pairs: Vec<String> = runs
        .iter()
        .map(|(a, b)| format!("seed {}: {:.3} vs {:.3}", a.seed, a.fd, b.fd))
        .collect();
    (
        wins >= 2 && slowest < Duration::from_secs(1800) && steps <= 20_000,
        format!(
            "K=8 <= K=1 in {wins}/3 pairs ({}), {steps} steps, slowest run {:.0}s",
            pairs.join(", "),
            slowest.as_secs_f64()
        ),
    )
}

fn top_layer(state: &TrainState<f32>) -> usize {
    let g = &state.generator;
    g.block_first_layer(g.cfg.channels.len() - 1)
}

fn trajectory_stds(state: &TrainState<f32>) -> Vec<f64> {
    let g = &state.generator;
    let (z, track) = eval_latents::<f32>(g, EVAL_SEED, 0, 63.0).unwrap();
    let times: Vec<f64> = (0..64).map(f64::from).collect();
    let traj = attention_trajectory(g, &state.store, &z, &track, &times, top_layer(state)).unwrap();
    let n = traj.len() as f64;
    (0..g.cfg.style.k)
        .map(|j| {
            let mean = traj.iter().map(|r| r[j]).sum::<f64>() / n;
            (traj.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

fn c8_trajectory(k8: &ToyRun) -> Outcome {
    assert_eq!(k8.k, 8);
    let stds = trajectory_stds(&k8.state);
    let moving = stds.iter().filter(|&&s| s > 1e-3).count();
    let listed: Vec<String> = stds.iter().map(|s| format!("{s:.1e}")).collect();
    (moving >= 2, format!("seed {} model, {moving}/8 styles with std > 1e-3 [{}]", k8.seed, listed.join(" ")))
}

fn style_cosine(state: &TrainState<f32>) -> (f64, f64) {
    let g = &state.generator;
    let (z, track) = eval_latents::<f32>(g, EVAL_SEED, 0, 63.0).unwrap();
    let mut off = 0.0;
    let mut diag_min = f64::INFINITY;
    let times = [0.0, 16.0, 32.0, 48.0];
    for &t in &times {
        let m = motion_style_cosine(g, &state.store, &z, &track, t, top_layer(state)).unwrap();
        off += mean_abs_off_diagonal(&m) / times.len() as f64;
        diag_min = diag_min.min((0..m.len()).map(|i| m[i][i]).fold(f64::INFINITY, f64::min));
    }
    (off, diag_min)
}

fn c9_cosine(k8: &ToyRun) -> Outcome {
    assert!(k8.state.cfg.use_div && k8.state.cfg.lambda_div > 0.0);
    let (off, diag) = style_cosine(&k8.state);
    (
        off < 0.9 && off < diag,
        format!("seed {} model, mean |off-diagonal| {off:.4}, diagonal {diag:.4}", k8.seed),
    )
}

fn tiny_config() -> TrainConfig {
    let cfg = TrainConfig::from_text(
        "resolution=16\nchannels=8,8\nconst_channels=8\nk=4\nbatch=2\nsteps=10\ncheckpoint_every=5\n\
         disc_channels=8,8\ndisc_head_channels=16\ndataset_size=64\nr1_interval=4\ndtype=f64",
    )
    .unwrap();
    cfg.validate().unwrap();
    cfg
}

fn c10_determinism() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.txt");
    std::fs::write(&cfg_path, tiny_config().to_text()).unwrap();
    let csv: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|run| {
            let out = dir.path().join(run);
            cmd_train(Some(&cfg_path), &out, None).unwrap();
            std::fs::read(out.join("metrics.csv")).unwrap()
        })
        .collect();
    let same_csv = csv[0] == csv[1] && csv[0].len() > 100;
    ok &= same_csv;
    notes.push(format!("metrics.csv identical: {same_csv}"));

    let mut straight = TrainState::<f64>::new(tiny_config()).unwrap();
    for _ in 0..10 {
        straight.train_step().unwrap();
    }
    let mut first = TrainState::<f64>::new(tiny_config()).unwrap();
    for _ in 0..5 {
        first.train_step().unwrap();
    }
    let mut resumed = from_bytes::<f64>(&to_bytes(&first)).unwrap();
    drop(first);
    for _ in 0..5 {
        resumed.train_step().unwrap();
    }
    let same_resume = to_bytes(&straight) == to_bytes(&resumed);
    ok &= same_resume;
    notes.push(format!("resume at 5 of 10 bitwise: {same_resume}"));

    let bytes = to_bytes(&straight);
    let round = to_bytes(&from_bytes::<f64>(&bytes).unwrap()) == bytes;
    ok &= round;
    notes.push(format!("checkpoint round trip identical: {round} ({} bytes)", bytes.len()));
    (ok, notes.join("; "))
}

fn random_stats(d: usize, seed: u64) -> FeatureStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(d, d + 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    FeatureStats {
        mean: DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        cov: &a * a.transpose(),
        count: d + 2,
    }
}

fn c11_frechet() -> Outcome {
    let one_d = |mean: f64, var: f64| FeatureStats {
        mean: DVector::from_element(1, mean),
        cov: DMatrix::from_element(1, 1, var),
        count: 2,
    };
    let closed = frechet_distance(&one_d(0.0, 1.0), &one_d(1.0, 4.0)).unwrap();
    let mut self_worst: f64 = 0.0;
    let mut sym_worst: f64 = 0.0;
    for seed in 0..20 {
        let d = 1 + (seed as usize % 12);
        let (a, b) = (random_stats(d, seed), random_stats(d, seed + 100));
        self_worst = self_worst.max(frechet_distance(&a, &a).unwrap().abs());
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        sym_worst = sym_worst.max((ab - ba).abs());
    }
    (
        closed == 2.0 && self_worst <= 1e-8 && sym_worst <= 1e-8,
        format!("1-D case {closed:?}, |FD(a,a)| <= {self_worst:.1e}, asymmetry <= {sym_worst:.1e}"),
    )
}

fn report(id: usize, name: &str, (pass, detail): Outcome) -> bool {
    println!("criterion {id:>2} {:<28} {}  {detail}", name, if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let mut all = true;
    all &= report(1, "gradient suite", c1_gradient_suite());
    all &= report(2, "low-rank oracle", c2_lowrank_oracle());
    all &= report(3, "parameter counts", c3_bench());
    all &= report(4, "K=1 degeneracy", c4_k1_degeneracy());
    all &= report(5, "attention invariants", c5_invariants());
    all &= report(6, "motion-diff wiring", c6_motion_diff());
    all &= report(10, "determinism", c10_determinism());
    all &= report(11, "frechet sanity", c11_frechet());

    let runs: Vec<(ToyRun, ToyRun)> = SEED_PAIRS.iter().map(|&s| (train_toy(8, s), train_toy(1, s))).collect();
    all &= report(7, "toy training", c7_toy_training(&runs));
    all &= report(8, "attention trajectory", c8_trajectory(&runs[0].0));
    all &= report(9, "style cosine", c9_cosine(&runs[0].0));
    for (k8, _) in &runs[1..] {
        let stds = trajectory_stds(&k8.state);
        let (off, _) = style_cosine(&k8.state);
        println!(
            "  seed {} K=8 model: {}/8 styles with std > 1e-3, mean |off-diagonal| {off:.4}",
            k8.seed,
            stds.iter().filter(|&&s| s > 1e-3).count()
        );
    }

    if !all {
        println!("acceptance: FAIL");
        std::process::exit(1);
    }
    println!("acceptance: PASS");
}
