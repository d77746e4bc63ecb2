//! Small building blocks shared by the networks.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{Group, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LRELU_SLOPE: f64 = 0.2;

/// `y = x·W + b` on row vectors, `W: (in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights drawn from N(0, std²), bias filled with `bias_init`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        d_in: usize,
        d_out: usize,
        std: f64,
        bias_init: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, Tensor::randn(&[d_in, d_out], std, rng));
        let bias = store.add(
            format!("{name}.bias"),
            group,
            Tensor::full(&[d_out], T::from_f64_lossy(bias_init)),
        );
        Linear {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    /// He-style default: std = 1/√d_in, zero bias.
    pub fn standard<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, group, d_in, d_out, 1.0 / (d_in as f64).sqrt(), 0.0, rng)
    }

    /// `x: (n, d_in) -> (n, d_out)`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let y = s.graph.matmul(x, w)?;
        s.graph.add(y, b)
    }
}

/// Stack of [`Linear`] layers with leaky-relu between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(s, x)?;
            if i + 1 < self.layers.len() {
                x = s.graph.leaky_relu(x, LRELU_SLOPE)?;
            }
        }
        Ok(x)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("empty mlp")
    }
}
