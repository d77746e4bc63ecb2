//! Content mapping, content styles, motion vectors and the low-rank
//! hypernetwork that turns motion vectors into per-layer modulation tensors.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{Linear, Mlp, LRELU_SLOPE};
use crate::params::{Group, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Filter shape of one modulated conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
}

impl LayerShape {
    pub fn new(c_out: usize, c_in: usize, kh: usize, kw: usize) -> Self {
        LayerShape { c_out, c_in, kh, kw }
    }

    /// Flattened filter length `c_in·kh·kw`.
    pub fn fan_in(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Per-rank style length `c_in + kh + kw`.
    pub fn style_len(&self) -> usize {
        self.c_in + self.kh + self.kw
    }

    pub fn filter_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleConfig {
    pub d_c: usize,
    pub mapping_layers: usize,
    pub motion_hidden: Vec<usize>,
    pub k: usize,
    pub d_m: usize,
    pub d_h: usize,
    pub rank: usize,
    pub d_v: usize,
    /// Std of the per-layer hypernetwork head weights.
    pub head_std: f64,
}

impl Default for StyleConfig {
    fn default() -> Self {
        StyleConfig {
            d_c: 64,
            mapping_layers: 2,
            motion_hidden: vec![256, 256],
            k: 8,
            d_m: 128,
            d_h: 128,
            rank: 1,
            d_v: 16,
            head_std: 0.01,
        }
    }
}

/// `(lowrank, fullrank)` hypernetwork output-layer parameter counts for one layer.
pub fn hyper_param_count(shape: LayerShape, d_h: usize, rank: usize) -> (u64, u64) {
    let d_h = d_h as u64;
    let low = d_h * rank as u64 * shape.style_len() as u64;
    let full = d_h * (shape.c_out * shape.fan_in()) as u64;
    (low, full)
}

/// `Σ_r v1_r ⊗ v2_r ⊗ v3_r` for one style of shape `(R, c_in+kh+kw)`, giving `(c_in, kh, kw)`.
pub fn lowrank_reconstruct<T: Scalar>(style: &Tensor<T>, c_in: usize, kh: usize, kw: usize) -> Result<Tensor<T>> {
    let l = c_in + kh + kw;
    if style.rank() != 2 || style.shape()[1] != l {
        return Err(Error::shape("lowrank_reconstruct", style.shape(), &[style.shape()[0], l]));
    }
    let rank = style.shape()[0];
    let d = style.data();
    let mut out = vec![T::zero(); c_in * kh * kw];
    for r in 0..rank {
        let row = &d[r * l..(r + 1) * l];
        let (v1, rest) = row.split_at(c_in);
        let (v2, v3) = rest.split_at(kh);
        for (i, &a) in v1.iter().enumerate() {
            for (h, &b) in v2.iter().enumerate() {
                let ab = a * b;
                let base = (i * kh + h) * kw;
                for (w, &c) in v3.iter().enumerate() {
                    out[base + w] += ab * c;
                }
            }
        }
    }
    Tensor::new(vec![c_in, kh, kw], out)
}

/// Graph version for all K styles at once: `(K, R, L) -> (K, c_in·kh·kw)`.
pub fn lowrank_reconstruct_graph<T: Scalar>(g: &mut Graph<T>, styles: Var, shape: LayerShape) -> Result<Var> {
    let s = g.shape(styles).to_vec();
    if s.len() != 3 || s[2] != shape.style_len() {
        return Err(Error::shape("lowrank_reconstruct", &s, &[s.first().copied().unwrap_or(0), 0, shape.style_len()]));
    }
    let (k, r) = (s[0], s[1]);
    let v1 = g.slice(styles, 2, 0, shape.c_in)?;
    let v2 = g.slice(styles, 2, shape.c_in, shape.kh)?;
    let v3 = g.slice(styles, 2, shape.c_in + shape.kh, shape.kw)?;
    let v1 = g.reshape(v1, &[k, r, shape.c_in, 1, 1])?;
    let v2 = g.reshape(v2, &[k, r, 1, shape.kh, 1])?;
    let v3 = g.reshape(v3, &[k, r, 1, 1, shape.kw])?;
    let p = g.mul(v1, v2)?;
    let p = g.mul(p, v3)?;
    let m = if r == 1 { p } else { g.sum_axis(p, 1, false)? };
    g.reshape(m, &[k, shape.fan_in()])
}

/// Per-layer style generators.
#[derive(Debug, Clone)]
pub struct StyleNetwork {
    pub cfg: StyleConfig,
    pub layers: Vec<LayerShape>,
    pub mapping: Mlp,
    pub motion_net: Mlp,
    pub affine: Vec<Linear>,
    pub trunk: Linear,
    pub heads: Vec<Linear>,
}

impl StyleNetwork {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        cfg: StyleConfig,
        layers: Vec<LayerShape>,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let d_c = cfg.d_c;
        let mapping = Mlp {
            layers: (0..cfg.mapping_layers)
                .map(|i| Linear::standard(store, &format!("mapping.{i}"), Group::Mapping, d_c, d_c, rng))
                .collect(),
        };
        let mut widths = vec![d_c + cfg.d_v];
        widths.extend(&cfg.motion_hidden);
        widths.push(cfg.k * cfg.d_m);
        let motion_net = Mlp {
            layers: widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::standard(store, &format!("motion_net.{i}"), Group::MotionNet, w[0], w[1], rng))
                .collect(),
        };
        let affine = layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let std = 1.0 / (d_c as f64).sqrt();
                Linear::new(store, &format!("affine.{i}"), Group::Affine, d_c, l.c_in, std, 1.0, rng)
            })
            .collect();
        let trunk = Linear::standard(store, "hyper.trunk", Group::Hyper, cfg.d_m, cfg.d_h, rng);
        // each rank term contributes R^{-1} when all three factors sit at their bias
        let bias = (cfg.rank as f64).powf(-1.0 / 3.0);
        let heads = layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let out = cfg.rank * l.style_len();
                Linear::new(store, &format!("hyper.head{i}"), Group::Hyper, cfg.d_h, out, cfg.head_std, bias, rng)
            })
            .collect();
        StyleNetwork {
            cfg,
            layers,
            mapping,
            motion_net,
            affine,
            trunk,
            heads,
        }
    }

    pub fn layer(&self, layer: usize) -> Result<LayerShape> {
        self.layers.get(layer).copied().ok_or(Error::UnknownLayer(layer))
    }

    /// `z_c: (1, d_c) -> w: (1, d_c)`.
    pub fn map_content<T: Scalar>(&self, s: &mut Session<'_, T>, z_c: Var) -> Result<Var> {
        self.mapping.forward(s, z_c)
    }

    /// Content style of a layer, shape `(c_in)`.
    pub fn affine_style<T: Scalar>(&self, s: &mut Session<'_, T>, w: Var, layer: usize) -> Result<Var> {
        let shape = self.layer(layer)?;
        let y = self.affine[layer].forward(s, w)?;
        s.graph.reshape(y, &[shape.c_in])
    }

    /// `(w: (1, d_c), v_t: (1, d_v)) -> (K, d_m)`.
    pub fn motion_vectors<T: Scalar>(&self, s: &mut Session<'_, T>, w: Var, v_t: Var) -> Result<Var> {
        let x = s.graph.concat(&[w, v_t], 1)?;
        let y = self.motion_net.forward(s, x)?;
        s.graph.reshape(y, &[self.cfg.k, self.cfg.d_m])
    }

    /// Trunk features shared by every layer head, `(K, d_h)`.
    pub fn hyper_trunk<T: Scalar>(&self, s: &mut Session<'_, T>, m: Var) -> Result<Var> {
        let h = self.trunk.forward(s, m)?;
        s.graph.leaky_relu(h, LRELU_SLOPE)
    }

    /// Motion styles `(K, R, c_in+kh+kw)` of a layer from trunk features.
    pub fn hyper_styles_from_trunk<T: Scalar>(&self, s: &mut Session<'_, T>, h: Var, layer: usize) -> Result<Var> {
        let shape = self.layer(layer)?;
        let y = self.heads[layer].forward(s, h)?;
        let k = s.graph.shape(h)[0];
        s.graph.reshape(y, &[k, self.cfg.rank, shape.style_len()])
    }

    /// Motion styles of a layer from motion vectors `(K, d_m)`.
    pub fn hyper_styles<T: Scalar>(&self, s: &mut Session<'_, T>, m: Var, layer: usize) -> Result<Var> {
        self.layer(layer)?;
        let h = self.hyper_trunk(s, m)?;
        self.hyper_styles_from_trunk(s, h, layer)
    }

    /// Modulation matrix `M_t: (K, c_in·kh·kw)` of a layer.
    pub fn modulation<T: Scalar>(&self, s: &mut Session<'_, T>, h: Var, layer: usize) -> Result<Var> {
        let styles = self.hyper_styles_from_trunk(s, h, layer)?;
        lowrank_reconstruct_graph(&mut s.graph, styles, self.layers[layer])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> StyleConfig {
        StyleConfig {
            d_c: 6,
            mapping_layers: 2,
            motion_hidden: vec![10],
            k: 3,
            d_m: 5,
            d_h: 7,
            rank: 2,
            d_v: 4,
            head_std: 0.3,
        }
    }

    fn small_net(seed: u64) -> (StyleNetwork, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![LayerShape::new(4, 3, 3, 3), LayerShape::new(2, 5, 1, 1)];
        let net = StyleNetwork::new(small_cfg(), layers, &mut store, &mut rng);
        (net, store)
    }

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 1.0, &mut rng)
    }

    fn loop_oracle(style: &Tensor<f64>, c_in: usize, kh: usize, kw: usize) -> Vec<f64> {
        let l = c_in + kh + kw;
        let d = style.data();
        let rank = style.shape()[0];
        let mut out = vec![0.0; c_in * kh * kw];
        for i in 0..c_in {
            for h in 0..kh {
                for w in 0..kw {
                    let mut acc = 0.0;
                    for r in 0..rank {
                        acc += d[r * l + i] * d[r * l + c_in + h] * d[r * l + c_in + kh + w];
                    }
                    out[(i * kh + h) * kw + w] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn outer_product_examples() {
        let s = Tensor::<f64>::from_f64(&[1, 4], &[1.0, 2.0, 3.0, 5.0]).unwrap();
        let m = lowrank_reconstruct(&s, 2, 1, 1).unwrap();
        assert_eq!(m.shape(), &[2, 1, 1]);
        assert_eq!(m.data(), &[15.0, 30.0]);
        let ones = Tensor::<f64>::ones(&[1, 3 + 2 + 4]);
        let m = lowrank_reconstruct(&ones, 3, 2, 4).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        assert!(lowrank_reconstruct(&ones, 3, 3, 4).is_err());
    }

    #[test]
    fn rank_two_matches_loop() {
        let s = rand_tensor(&[2, 4 + 3 + 2], 5);
        let m = lowrank_reconstruct(&s, 4, 3, 2).unwrap();
        let o = loop_oracle(&s, 4, 3, 2);
        for (a, b) in m.data().iter().zip(&o) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn graph_reconstruction_matches_numeric() {
        let shape = LayerShape::new(1, 3, 2, 2);
        let styles = rand_tensor(&[4, 3, shape.style_len()], 9);
        let mut g = Graph::<f64>::new();
        let v = g.constant(styles.clone());
        let m = lowrank_reconstruct_graph(&mut g, v, shape).unwrap();
        let mv = g.value(m);
        assert_eq!(mv.shape(), &[4, 12]);
        for k in 0..4 {
            let one = styles.slice_axis(0, k, 1).unwrap().reshape(&[3, shape.style_len()]).unwrap();
            let o = loop_oracle(&one, 3, 2, 2);
            for (j, b) in o.iter().enumerate() {
                assert!((mv.data()[k * 12 + j] - b).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reconstruction_matches_loop_oracle(c_in in 1usize..7, kh in 1usize..4, kw in 1usize..4, r in 1usize..6, seed in any::<u64>()) {
            let s = rand_tensor(&[r, c_in + kh + kw], seed);
            let m = lowrank_reconstruct(&s, c_in, kh, kw).unwrap();
            let o = loop_oracle(&s, c_in, kh, kw);
            for (a, b) in m.data().iter().zip(&o) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn unfolded_rank_is_bounded(c_in in 2usize..7, kh in 1usize..4, kw in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
            let s = rand_tensor(&[r, c_in + kh + kw], seed);
            let m = lowrank_reconstruct(&s, c_in, kh, kw).unwrap();
            let mat = nalgebra::DMatrix::from_row_slice(c_in, kh * kw, m.data());
            let sv = mat.singular_values();
            let mut sv: Vec<f64> = sv.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for &v in sv.iter().skip(r) {
                prop_assert!(v < 1e-8, "singular value {} past rank {}", v, r);
            }
        }

        #[test]
        fn lowrank_count_below_fullrank(c_out in 1usize..600, c_in in 1usize..600, kh in 1usize..6, kw in 1usize..6, d_h in 1usize..256, r in 1usize..4) {
            let shape = LayerShape::new(c_out, c_in, kh, kw);
            let (low, full) = hyper_param_count(shape, d_h, 1);
            prop_assert_eq!(low, (d_h * shape.style_len()) as u64);
            if kh * kw * c_out > 1 && shape.style_len() < c_out * shape.fan_in() {
                prop_assert!(low < full);
            }
            let (low_r, _) = hyper_param_count(shape, d_h, r);
            prop_assert_eq!(low_r, low * r as u64);
        }
    }

    #[test]
    fn appendix_counts() {
        let shape = LayerShape::new(512, 512, 3, 3);
        assert_eq!(shape.style_len(), 518);
        assert_eq!(hyper_param_count(shape, 128, 1), (66_304, 301_989_888));
        assert_eq!(shape.c_out * shape.fan_in(), 2_359_296);
    }

    #[test]
    fn content_mapping_is_deterministic_and_zero_head_gives_bias() {
        let (net, mut store) = small_net(1);
        let z = rand_tensor(&[1, 6], 2);
        let run = |store: &ParamStore<f64>| {
            let mut s = Session::frozen(store);
            let zv = s.graph.constant(z.clone());
            let w = net.map_content(&mut s, zv).unwrap();
            s.graph.value(w).clone()
        };
        assert_eq!(run(&store), run(&store));
        let last = net.mapping.last().clone();
        *store.value_mut(last.weight) = Tensor::zeros(&[6, 6]);
        let bias = rand_tensor(&[6], 3);
        *store.value_mut(last.bias) = bias.clone();
        assert_eq!(run(&store).data(), bias.data());
    }

    #[test]
    fn affine_bias_gives_ones_and_respects_widths() {
        let (net, mut store) = small_net(4);
        for (i, a) in net.affine.iter().enumerate() {
            let n = net.layers[i].c_in;
            *store.value_mut(a.weight) = Tensor::zeros(&[6, n]);
        }
        let mut s = Session::frozen(&store);
        let w = s.graph.constant(rand_tensor(&[1, 6], 5));
        let s0 = net.affine_style(&mut s, w, 0).unwrap();
        let s1 = net.affine_style(&mut s, w, 1).unwrap();
        assert_eq!(s.graph.shape(s0), &[3]);
        assert_eq!(s.graph.shape(s1), &[5]);
        assert!(s.graph.value(s0).data().iter().all(|&v| v == 1.0));
        assert!(matches!(net.affine_style(&mut s, w, 2), Err(Error::UnknownLayer(2))));
        assert!(matches!(net.hyper_styles(&mut s, w, 7), Err(Error::UnknownLayer(7))));
    }

    #[test]
    fn motion_vectors_depend_on_time_only_through_code() {
        let (net, store) = small_net(6);
        let mut s = Session::frozen(&store);
        let w = s.graph.constant(rand_tensor(&[1, 6], 7));
        let mv = |s: &mut Session<'_, f64>, v: Tensor<f64>| {
            let v = s.graph.constant(v);
            let m = net.motion_vectors(s, w, v).unwrap();
            s.graph.value(m).clone()
        };
        let a = mv(&mut s, Tensor::zeros(&[1, 4]));
        let b = mv(&mut s, Tensor::zeros(&[1, 4]));
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[3, 5]);
        let c = mv(&mut s, rand_tensor(&[1, 4], 8));
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn default_motion_vector_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = StyleNetwork::new(StyleConfig::default(), vec![LayerShape::new(8, 8, 3, 3)], &mut store, &mut rng);
        let mut s = Session::frozen(&store);
        let w = s.graph.constant(Tensor::zeros(&[1, 64]));
        let v = s.graph.constant(Tensor::zeros(&[1, 16]));
        let m = net.motion_vectors(&mut s, w, v).unwrap();
        assert_eq!(s.graph.shape(m), &[8, 128]);
        let st = net.hyper_styles(&mut s, m, 0).unwrap();
        assert_eq!(s.graph.shape(st), &[8, 1, 8 + 3 + 3]);
        // initial modulation sits near the all-ones tensor
        let h = net.hyper_trunk(&mut s, m).unwrap();
        let mm = net.modulation(&mut s, h, 0).unwrap();
        let dev = s.graph.value(mm).data().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev < 0.5, "deviation {dev}");
    }

    #[test]
    fn wide_layer_style_length_and_rank_shape() {
        let shape = LayerShape::new(512, 512, 3, 3);
        for r in [1usize, 3] {
            let cfg = StyleConfig {
                d_c: 4,
                motion_hidden: vec![4],
                k: 2,
                d_m: 4,
                d_h: 4,
                rank: r,
                d_v: 2,
                ..StyleConfig::default()
            };
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let net = StyleNetwork::new(cfg, vec![shape], &mut store, &mut rng);
            let mut s = Session::frozen(&store);
            let m = s.graph.constant(Tensor::ones(&[2, 4]));
            let st = net.hyper_styles(&mut s, m, 0).unwrap();
            assert_eq!(s.graph.shape(st), &[2, r, 518]);
            let v = s.graph.value(st);
            // identical motion vectors produce identical styles
            assert_eq!(v.slice_axis(0, 0, 1).unwrap().data(), v.slice_axis(0, 1, 1).unwrap().data());
        }
    }

    fn check_param(net: &StyleNetwork, store: &ParamStore<f64>, id: crate::params::ParamId, layer: usize) {
        let x = store.value(id).clone();
        let z = rand_tensor(&[1, 6], 11);
        let v = rand_tensor(&[1, 4], 12);
        let probe = rand_tensor(&[3, 3 * 3 * 3], 13);
        let r = grad_check(
            |g, p| {
                Session::scoped(store, g, |s| {
                    s.bind(id, p)?;
                    let zv = s.graph.constant(z.clone());
                    let vv = s.graph.constant(v.clone());
                    let w = net.map_content(s, zv)?;
                    let st = net.affine_style(s, w, layer)?;
                    let m = net.motion_vectors(s, w, vv)?;
                    let h = net.hyper_trunk(s, m)?;
                    let mm = net.modulation(s, h, 0)?;
                    let pc = s.graph.constant(probe.clone());
                    let a = s.graph.dot(mm, pc)?;
                    let b = s.graph.square(st)?;
                    let b = s.graph.sum(b)?;
                    s.graph.add(a, b)
                })
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(r.passes(1e-4), "{} {r:?}", store.entry(id).name);
    }

    #[test]
    fn gradients_through_style_network() {
        let (net, store) = small_net(10);
        for id in store.ids() {
            check_param(&net, &store, id, 0);
        }
    }

    #[test]
    fn modulation_varies_with_motion_code() {
        let (net, store) = small_net(14);
        let mut s = Session::frozen(&store);
        let w = s.graph.constant(rand_tensor(&[1, 6], 15));
        let mut mods = Vec::new();
        for seed in [16, 17] {
            let v = s.graph.constant(rand_tensor(&[1, 4], seed));
            let m = net.motion_vectors(&mut s, w, v).unwrap();
            let h = net.hyper_trunk(&mut s, m).unwrap();
            let mm = net.modulation(&mut s, h, 1).unwrap();
            mods.push(s.graph.value(mm).clone());
        }
        assert!(mods[0].max_abs_diff(&mods[1]) > 0.0);
    }
}
