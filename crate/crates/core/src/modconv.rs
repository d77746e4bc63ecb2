//! Modulated convolution with motion-style attention.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::hypernet::LayerShape;
use crate::layers::LRELU_SLOPE;
use crate::params::{Group, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEMOD_EPS: f64 = 1e-8;

/// Order in which content and motion modulation are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Content first; attention queries are the content-modulated filters.
    #[default]
    ContentFirst,
    /// Motion first; attention queries are the raw filters.
    MotionFirst,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" | "1" | "content-first" => Ok(Strategy::ContentFirst),
            "ii" | "2" | "motion-first" => Ok(Strategy::MotionFirst),
            other => Err(Error::Config(format!("unknown modulation strategy `{other}` (expected i or ii)"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::ContentFirst => "i",
            Strategy::MotionFirst => "ii",
        })
    }
}

/// Per-frame attention outputs of one layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionRecord {
    pub layer: usize,
    /// Pre-softmax logits `(c_out, K)`.
    pub logits: Var,
    /// Attended modulation `(c_out, c_in·kh·kw)`.
    pub modulation: Var,
    /// Layer output feature map `(c_out, H, W)` before the activation.
    pub features: Var,
}

/// `W ⊙ s` with `s: (c_in)` broadcast over output channels and taps.
pub fn content_modulate<T: Scalar>(g: &mut Graph<T>, w: Var, s: Var) -> Result<Var> {
    let ws = g.shape(w).to_vec();
    if ws.len() != 4 || g.shape(s) != [ws[1]] {
        return Err(Error::shape("content_modulate", &ws, g.shape(s)));
    }
    let s = g.reshape(s, &[1, ws[1], 1, 1])?;
    g.mul(w, s)
}

/// Returns `(A_t, S_t)`: logits `W_flat·Mᵀ/√D` and `softmax_K(A_t)·M`.
pub fn mostatt<T: Scalar>(g: &mut Graph<T>, w: Var, m: Var) -> Result<(Var, Var)> {
    let ws = g.shape(w).to_vec();
    let ms = g.shape(m).to_vec();
    let c_out = ws[0];
    let d: usize = ws[1..].iter().product();
    if ms.len() != 2 || ms[1] != d {
        return Err(Error::shape("mostatt", &ws, &ms));
    }
    let wf = g.reshape(w, &[c_out, d])?;
    let mt = g.transpose(m)?;
    let a = g.matmul(wf, mt)?;
    let a = g.scale(a, 1.0 / (d as f64).sqrt())?;
    let p = g.softmax(a, 1)?;
    let s = g.matmul(p, m)?;
    Ok((a, s))
}

/// `W ⊙ S` with `S` reshaped to the filter shape.
pub fn motion_modulate<T: Scalar>(g: &mut Graph<T>, w: Var, s: Var) -> Result<Var> {
    let ws = g.shape(w).to_vec();
    let s = g.reshape(s, &ws)?;
    g.mul(w, s)
}

/// Scales each output channel of `w` to unit norm: `w / √(Σ w² + eps)`.
pub fn demodulate<T: Scalar>(g: &mut Graph<T>, w: Var, eps: f64) -> Result<Var> {
    let ws = g.shape(w).to_vec();
    let c_out = ws[0];
    let d: usize = ws[1..].iter().product();
    let sq = g.square(w)?;
    let sq = g.reshape(sq, &[c_out, d])?;
    let n = g.sum_axis(sq, 1, true)?;
    let n = g.add_scalar(n, eps)?;
    let r = g.rsqrt(n)?;
    let r = g.reshape(r, &[c_out, 1, 1, 1])?;
    g.mul(w, r)
}

/// One modulated 3×3 (or 1×1) conv layer with its filter bank.
#[derive(Debug, Clone)]
pub struct ModConv {
    /// Index of this layer in the style network.
    pub layer: usize,
    pub shape: LayerShape,
    pub weight: ParamId,
    pub bias: ParamId,
    pub demod: bool,
    /// Leaky-relu with √2 gain after bias.
    pub activate: bool,
}

impl ModConv {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        layer: usize,
        shape: LayerShape,
        demod: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("synthesis.conv{layer}.weight"), Group::Filters, Tensor::randn(&shape.filter_shape(), 1.0, rng));
        let bias = store.add(format!("synthesis.conv{layer}.bias"), Group::Filters, Tensor::zeros(&[shape.c_out]));
        ModConv {
            layer,
            shape,
            weight,
            bias,
            demod,
            activate: true,
        }
    }

    /// Final per-frame weights and the attention logits/modulation.
    pub fn modulated_weights<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        style: Var,
        m: Var,
        strategy: Strategy,
    ) -> Result<(Var, Var, Var)> {
        let w = s.param(self.weight);
        let g = &mut s.graph;
        let (wt, a, sm) = match strategy {
            Strategy::ContentFirst => {
                let wc = content_modulate(g, w, style)?;
                let (a, sm) = mostatt(g, wc, m)?;
                (motion_modulate(g, wc, sm)?, a, sm)
            }
            Strategy::MotionFirst => {
                let (a, sm) = mostatt(g, w, m)?;
                let wm = motion_modulate(g, w, sm)?;
                (content_modulate(g, wm, style)?, a, sm)
            }
        };
        let wt = if self.demod { demodulate(g, wt, DEMOD_EPS)? } else { wt };
        Ok((wt, a, sm))
    }

    /// `x: (1, c_in, H, W)` for one frame; returns `(1, c_out, H, W)` and its record.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        style: Var,
        m: Var,
        strategy: Strategy,
    ) -> Result<(Var, AttentionRecord)> {
        let (wt, logits, modulation) = self.modulated_weights(s, style, m, strategy)?;
        let b = s.param(self.bias);
        let g = &mut s.graph;
        let pad = (self.shape.kh / 2, self.shape.kw / 2);
        let y = g.conv2d(x, wt, pad)?;
        let b = g.reshape(b, &[1, self.shape.c_out, 1, 1])?;
        let y = g.add(y, b)?;
        let ys = g.shape(y).to_vec();
        let features = g.reshape(y, &ys[1..])?;
        let out = if self.activate {
            let a = g.leaky_relu(y, LRELU_SLOPE)?;
            g.scale(a, std::f64::consts::SQRT_2)?
        } else {
            y
        };
        let record = AttentionRecord {
            layer: self.layer,
            logits,
            modulation,
            features,
        };
        Ok((out, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::tensor::conv2d;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 1.0, &mut rng)
    }

    fn eval2(f: impl FnOnce(&mut Graph<f64>) -> Var) -> Tensor<f64> {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).clone()
    }

    fn layer(shape: LayerShape, demod: bool, seed: u64) -> (ModConv, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = ModConv::new(&mut store, 0, shape, demod, &mut rng);
        (conv, store)
    }

    /// Runs the layer on constants and returns `(output, logits, modulation)`.
    fn run(
        conv: &ModConv,
        store: &ParamStore<f64>,
        x: &Tensor<f64>,
        style: &Tensor<f64>,
        m: &Tensor<f64>,
        strategy: Strategy,
    ) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut s = Session::frozen(store);
        let xv = s.graph.constant(x.clone());
        let sv = s.graph.constant(style.clone());
        let mv = s.graph.constant(m.clone());
        let (y, r) = conv.forward(&mut s, xv, sv, mv, strategy).unwrap();
        let g = &s.graph;
        (g.value(y).clone(), g.value(r.logits).clone(), g.value(r.modulation).clone())
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("i".parse::<Strategy>().unwrap(), Strategy::ContentFirst);
        assert_eq!("ii".parse::<Strategy>().unwrap(), Strategy::MotionFirst);
        assert!(matches!("iii".parse::<Strategy>(), Err(Error::Config(_))));
        assert_eq!(Strategy::MotionFirst.to_string(), "ii");
    }

    #[test]
    fn content_modulation_examples() {
        let w = rand_tensor(&[3, 4, 2, 2], 1);
        let ones = eval2(|g| {
            let wv = g.constant(w.clone());
            let s = g.constant(Tensor::ones(&[4]));
            content_modulate(g, wv, s).unwrap()
        });
        assert_eq!(ones, w);
        let twos = eval2(|g| {
            let wv = g.constant(w.clone());
            let s = g.constant(Tensor::full(&[4], 2.0));
            content_modulate(g, wv, s).unwrap()
        });
        assert_eq!(twos, w.map(|v| 2.0 * v));
        let s = rand_tensor(&[4], 2);
        let out = eval2(|g| {
            let wv = g.constant(w.clone());
            let sv = g.constant(s.clone());
            content_modulate(g, wv, sv).unwrap()
        });
        for o in 0..3 {
            for i in 0..4 {
                for t in 0..4 {
                    let idx = (o * 4 + i) * 4 + t;
                    assert!((out.data()[idx] - w.data()[idx] * s.data()[i]).abs() < 1e-12);
                }
            }
        }
        let mut g = Graph::<f64>::new();
        let wv = g.constant(w.clone());
        let bad = g.constant(Tensor::ones(&[3]));
        assert!(content_modulate(&mut g, wv, bad).is_err());
    }

    /// Unscaled logits, softmax over K and the attended rows by explicit loops.
    fn attention_oracle(w: &Tensor<f64>, m: &Tensor<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c_out = w.shape()[0];
        let (k, d) = (m.shape()[0], m.shape()[1]);
        let (wd, md) = (w.data(), m.data());
        let mut raw = vec![0.0; c_out * k];
        for o in 0..c_out {
            for j in 0..k {
                raw[o * k + j] = (0..d).map(|i| wd[o * d + i] * md[j * d + i]).sum();
            }
        }
        let scaled: Vec<f64> = raw.iter().map(|v| v / (d as f64).sqrt()).collect();
        let mut s = vec![0.0; c_out * d];
        for o in 0..c_out {
            let row = &scaled[o * k..(o + 1) * k];
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k {
                for i in 0..d {
                    s[o * d + i] += e[j] / z * md[j * d + i];
                }
            }
        }
        (raw, scaled, s)
    }

    #[test]
    fn attention_matches_loop_oracle_and_scales_once() {
        let w = rand_tensor(&[3, 2, 2, 1], 3);
        let m = rand_tensor(&[2, 4], 4);
        let mut g = Graph::<f64>::new();
        let wv = g.constant(w.clone());
        let mv = g.constant(m.clone());
        let (a, s) = mostatt(&mut g, wv, mv).unwrap();
        let (raw, scaled, so) = attention_oracle(&w, &m);
        for ((x, r), sc) in g.value(a).data().iter().zip(&raw).zip(&scaled) {
            assert!((x - sc).abs() < 1e-10);
            assert!((x - r / 2.0).abs() < 1e-12);
        }
        for (x, y) in g.value(s).data().iter().zip(&so) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn single_key_and_identical_keys() {
        let w = rand_tensor(&[4, 3, 1, 1], 5);
        let row = rand_tensor(&[1, 3], 6);
        let mut g = Graph::<f64>::new();
        let wv = g.constant(w.clone());
        let mv = g.constant(row.clone());
        let (_, s) = mostatt(&mut g, wv, mv).unwrap();
        for o in 0..4 {
            assert_eq!(&g.value(s).data()[o * 3..o * 3 + 3], row.data());
        }
        let same = Tensor::concat(&[&row, &row, &row], 0).unwrap();
        let mv = g.constant(same);
        let (_, s) = mostatt(&mut g, wv, mv).unwrap();
        for o in 0..4 {
            for i in 0..3 {
                assert!((g.value(s).data()[o * 3 + i] - row.data()[i]).abs() < 1e-15);
            }
        }
        let bad = g.constant(Tensor::ones(&[2, 4]));
        assert!(mostatt(&mut g, wv, bad).is_err());
    }

    #[test]
    fn motion_modulation_examples() {
        let w = rand_tensor(&[2, 3, 3, 3], 7);
        let ones = eval2(|g| {
            let wv = g.constant(w.clone());
            let s = g.constant(Tensor::ones(&[2, 27]));
            motion_modulate(g, wv, s).unwrap()
        });
        assert_eq!(ones, w);
        let zeros = eval2(|g| {
            let wv = g.constant(w.clone());
            let s = g.constant(Tensor::zeros(&[2, 27]));
            motion_modulate(g, wv, s).unwrap()
        });
        assert!(zeros.data().iter().all(|&v| v == 0.0));
        let sm = rand_tensor(&[2, 27], 8);
        let out = eval2(|g| {
            let wv = g.constant(w.clone());
            let s = g.constant(sm.clone());
            motion_modulate(g, wv, s).unwrap()
        });
        for o in 0..2 {
            for i in 0..27 {
                assert!((out.data()[o * 27 + i] - w.data()[o * 27 + i] * sm.data()[o * 27 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn demodulation_examples() {
        let out = eval2(|g| {
            let w = g.constant(Tensor::ones(&[1, 4, 1, 1]));
            demodulate(g, w, DEMOD_EPS).unwrap()
        });
        let expect = 1.0 / (4.0f64 + DEMOD_EPS).sqrt();
        assert!(out.data().iter().all(|&v| (v - expect).abs() < 1e-15));
        let w = rand_tensor(&[5, 3, 3, 3], 9);
        let mut g = Graph::<f64>::new();
        let wv = g.constant(w);
        let d1 = demodulate(&mut g, wv, DEMOD_EPS).unwrap();
        let d2 = demodulate(&mut g, d1, DEMOD_EPS).unwrap();
        let v1 = g.value(d1);
        for o in 0..5 {
            let n: f64 = v1.data()[o * 27..(o + 1) * 27].iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
        assert!(v1.max_abs_diff(g.value(d2)) < 1e-6);
    }

    #[test]
    fn identity_styles_give_plain_convolution() {
        let shape = LayerShape::new(3, 2, 3, 3);
        let (mut conv, store) = layer(shape, false, 10);
        conv.activate = false;
        let x = rand_tensor(&[1, 2, 5, 5], 11);
        let (y, _, _) = run(&conv, &store, &x, &Tensor::ones(&[2]), &Tensor::ones(&[4, 18]), Strategy::ContentFirst);
        let plain = conv2d(&x, store.value(conv.weight), (1, 1)).unwrap();
        assert_eq!(y, plain);
        let (y2, _, _) = run(&conv, &store, &x, &Tensor::ones(&[2]), &Tensor::ones(&[4, 18]), Strategy::MotionFirst);
        assert_eq!(y2, plain);
    }

    #[test]
    fn strategies_differ_for_random_styles() {
        let shape = LayerShape::new(3, 2, 3, 3);
        let (conv, store) = layer(shape, true, 12);
        let x = rand_tensor(&[1, 2, 4, 4], 13);
        let st = rand_tensor(&[2], 14);
        let m = rand_tensor(&[3, 18], 15);
        let (a, _, _) = run(&conv, &store, &x, &st, &m, Strategy::ContentFirst);
        let (b, _, _) = run(&conv, &store, &x, &st, &m, Strategy::MotionFirst);
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn single_style_skips_attention() {
        let shape = LayerShape::new(4, 3, 3, 3);
        for demod in [false, true] {
            let (conv, store) = layer(shape, demod, 16);
            let x = rand_tensor(&[1, 3, 4, 4], 17);
            let st = rand_tensor(&[3], 18);
            let m = rand_tensor(&[1, 27], 19);
            let (y, _, _) = run(&conv, &store, &x, &st, &m, Strategy::ContentFirst);
            // direct pipeline: W ⊙ s ⊙ M¹ broadcast over output channels
            let direct = eval2(|g| {
                let w = g.constant(store.value(conv.weight).clone());
                let sv = g.constant(st.clone());
                let wc = content_modulate(g, w, sv).unwrap();
                let mv = g.constant(m.reshape(&[1, 3, 3, 3]).unwrap());
                let mut wt = g.mul(wc, mv).unwrap();
                if demod {
                    wt = demodulate(g, wt, DEMOD_EPS).unwrap();
                }
                let xv = g.constant(x.clone());
                let y = g.conv2d(xv, wt, (1, 1)).unwrap();
                let y = g.leaky_relu(y, LRELU_SLOPE).unwrap();
                g.scale(y, std::f64::consts::SQRT_2).unwrap()
            });
            assert!(y.max_abs_diff(&direct) < 1e-10);
        }
    }

    fn permute_rows(m: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
        let rows: Vec<Tensor<f64>> = perm.iter().map(|&p| m.slice_axis(0, p, 1).unwrap()).collect();
        Tensor::concat(&rows.iter().collect::<Vec<_>>(), 0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn attention_rows_are_convex_and_normalized(c_out in 1usize..5, d in 1usize..8, k in 1usize..6, seed in any::<u64>()) {
            let w = rand_tensor(&[c_out, d, 1, 1], seed);
            let m = rand_tensor(&[k, d], seed ^ 1);
            let mut g = Graph::<f64>::new();
            let wv = g.constant(w);
            let mv = g.constant(m.clone());
            let (a, s) = mostatt(&mut g, wv, mv).unwrap();
            let p = g.value(a).softmax(1).unwrap();
            for o in 0..c_out {
                let sum: f64 = p.data()[o * k..(o + 1) * k].iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
            for i in 0..d {
                let col: Vec<f64> = (0..k).map(|j| m.data()[j * d + i]).collect();
                let lo = col.iter().cloned().fold(f64::MAX, f64::min);
                let hi = col.iter().cloned().fold(f64::MIN, f64::max);
                for o in 0..c_out {
                    let v = g.value(s).data()[o * d + i];
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn style_permutation_leaves_output_unchanged(seed in any::<u64>(), k in 2usize..6, ii in any::<bool>()) {
            let shape = LayerShape::new(3, 2, 3, 3);
            let (conv, store) = layer(shape, true, seed);
            let x = rand_tensor(&[1, 2, 4, 4], seed ^ 2);
            let st = rand_tensor(&[2], seed ^ 3);
            let m = rand_tensor(&[k, 18], seed ^ 4);
            let mut perm: Vec<usize> = (0..k).rev().collect();
            perm.rotate_left(1);
            let strategy = if ii { Strategy::MotionFirst } else { Strategy::ContentFirst };
            let (a, _, _) = run(&conv, &store, &x, &st, &m, strategy);
            let (b, _, _) = run(&conv, &store, &x, &st, &permute_rows(&m, &perm), strategy);
            prop_assert!(a.max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn gradients_through_full_layer() {
        let shape = LayerShape::new(2, 2, 3, 3);
        let (conv, store) = layer(shape, true, 20);
        let x = rand_tensor(&[1, 2, 4, 4], 21);
        let st = rand_tensor(&[2], 22);
        let m = rand_tensor(&[3, 18], 23);
        let probe = rand_tensor(&[1, 2, 4, 4], 24);
        for strategy in [Strategy::ContentFirst, Strategy::MotionFirst] {
            // wrt input, style, modulation and filter in turn
            for which in 0..4 {
                let base = [&x, &st, &m, store.value(conv.weight)][which].clone();
                let r = grad_check(
                    |g, p| {
                        Session::scoped(&store, g, |s| {
                            let mut xv = s.graph.constant(x.clone());
                            let mut sv = s.graph.constant(st.clone());
                            let mut mv = s.graph.constant(m.clone());
                            match which {
                                0 => xv = p,
                                1 => sv = p,
                                2 => mv = p,
                                _ => s.bind(conv.weight, p)?,
                            }
                            let (y, _) = conv.forward(s, xv, sv, mv, strategy)?;
                            let pc = s.graph.constant(probe.clone());
                            s.graph.dot(y, pc)
                        })
                    },
                    &base,
                    1e-4,
                )
                .unwrap();
                assert!(r.passes(1e-4), "{strategy} input {which}: {r:?}");
            }
        }
    }
}
