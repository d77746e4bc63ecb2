//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked elements of |analytic − numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Elements whose ±eps probes crossed a kink (abs / leaky-relu sign change).
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    /// Folds another report into this one, keeping the worst error.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

fn evaluate<T, F>(f: &F, x: &Tensor<T>) -> Result<(f64, Option<u64>)>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    g.record_kinks();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv)?;
    let value = g.value(y);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let v = value.item().as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            op: "grad_check objective".into(),
        });
    }
    Ok((v, g.kink_signature()))
}

/// Analytic gradient of `f` at `x` via the graph.
pub fn analytic_grad<T, F>(f: &F, x: &Tensor<T>) -> Result<Tensor<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = f(&mut g, xv)?;
    let gx = g.grad(y, &[xv])?;
    Ok(g.value(gx[0]).clone())
}

/// Checks every element of `x`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &all)
}

/// Checks the listed flat indices of `x` only.
pub fn grad_check_at<T, F>(f: F, x: &Tensor<T>, eps: f64, indices: &[usize]) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Invalid(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    let analytic = analytic_grad(&f, x)?;
    let (_, base_sig) = evaluate(&f, x)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = lit::<T>(orig.as_f64() + eps);
        let (fp, sp) = evaluate(&f, &probe)?;
        probe.data_mut()[i] = lit::<T>(orig.as_f64() - eps);
        let (fm, sm) = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(1.0);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
