//! Finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::{ParamStore, Tape, Tensor, Var};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    /// `max|analytic - numeric| / max(max|analytic|, max|numeric|, tiny)`.
    pub rel_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.rel_error <= tol)
    }
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let amax = analytic.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let nmax = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    (diff / amax.max(nmax).max(1e-30), amax)
}

/// Compares gradients of `f(inputs)` against central differences, one
/// report entry per input tensor. `f` must build a scalar on the tape it is
/// handed.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    eps: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        t.value(l).item()
    };
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*v) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; inputs[i].numel()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
        let (rel_error, max_abs_analytic) = rel_error(&analytic, &numeric);
        report.entries.push(GradCheckEntry { name: alloc::format!("input{i}"), rel_error, max_abs_analytic });
    }
    Ok(report)
}

/// Same as [`check_gradients`] for every trainable parameter of a store.
/// `f` binds parameters itself via [`Tape::param`].
pub fn check_param_gradients(
    store: &ParamStore<f64>,
    eps: f64,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut grads = store.clone();
    grads.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &grads)?;
    tape.backward_into(loss, &mut grads)?;
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::no_grad();
        let l = f(&mut t, s)?;
        t.value(l).item()
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for (id, p) in store.iter().filter(|(_, p)| p.trainable) {
        let mut numeric = Vec::with_capacity(p.value.numel());
        for j in 0..p.value.numel() {
            let orig = p.value.data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
        let (rel_error, max_abs_analytic) = rel_error(&grads.get(id).grad, &numeric);
        report.entries.push(GradCheckEntry { name: p.name.clone(), rel_error, max_abs_analytic });
    }
    Ok(report)
}
