//! Central finite-difference gradient checks in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::tensor::{ParamTensor, Parameterized, Tensor};

mod suite;
pub use suite::{run_gradient_suite, SuiteEntry, SuiteOptions, SuiteReport};

/// Denominator floor for relative errors; gradients smaller than this are
/// compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coords {
    All,
    /// At most `per_tensor` coordinates drawn without replacement per tensor.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation changed the activation pattern.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    /// Set when a loss evaluation was non-finite or failed.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_error() < tol
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn select(len: usize, coords: Coords, salt: usize) -> Vec<usize> {
    match coords {
        Coords::All => (0..len).collect(),
        Coords::Sample { per_tensor, seed } => {
            if per_tensor >= len {
                return (0..len).collect();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (salt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut idx = sample(&mut rng, len, per_tensor).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

fn evaluate(loss: &mut dyn FnMut() -> Result<f64>) -> std::result::Result<f64, String> {
    match loss() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("non-finite loss {v}")),
        Err(e) => Err(e.to_string()),
    }
}

/// Compares `analytic[i]` with central differences of `loss` with respect to
/// `inputs[i]`.
pub fn grad_check(
    names: &[&str],
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    eps: f64,
    coords: Coords,
    mut loss: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> GradCheckReport {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut tensors = Vec::new();
    for (t, (input, grad)) in inputs.iter().zip(analytic).enumerate() {
        let name = names.get(t).map(|s| s.to_string()).unwrap_or_else(|| format!("input{t}"));
        if grad.shape() != input.shape() {
            return GradCheckReport {
                tensors,
                failure: Some(format!("{name}: analytic gradient shape {} vs input {}", grad.shape(), input.shape())),
            };
        }
        let mut check = TensorCheck { name, max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
        for i in select(input.len(), coords, t) {
            let orig = input.data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = evaluate(&mut || loss(&work));
            work[t].data_mut()[i] = orig - eps;
            let minus = evaluate(&mut || loss(&work));
            work[t].data_mut()[i] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    tensors.push(check);
                    return GradCheckReport { tensors, failure: Some(e) };
                }
            };
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.checked += 1;
        }
        tensors.push(check);
    }
    GradCheckReport { tensors, failure: None }
}

fn with_param<M: Parameterized<f64>>(model: &mut M, target: usize, f: &mut dyn FnMut(&mut ParamTensor<f64>)) {
    let mut k = 0;
    model.visit_params_mut("", &mut |_, p| {
        if k == target {
            f(p);
        }
        k += 1;
    });
}

/// Models built from ReLU and max pooling are piecewise smooth. The pattern
/// identifies the smooth piece the last train-mode forward landed in.
pub trait Piecewise {
    /// ReLU signs and pool argmax of the last train-mode forward, packed;
    /// `None` when no forward state is held.
    fn activation_pattern(&self) -> Option<Vec<u64>>;
}

/// Appends the sign bits `v > 0` of `values`, 64 per word.
pub fn pack_signs<T: PartialOrd + Default>(values: &[T], out: &mut Vec<u64>) {
    let zero = T::default();
    for chunk in values.chunks(64) {
        let mut word = 0u64;
        for (i, v) in chunk.iter().enumerate() {
            if *v > zero {
                word |= 1 << i;
            }
        }
        out.push(word);
    }
}

/// Checks the accumulated parameter gradients of `model` (already populated
/// by the caller's backward pass) against central differences of `loss`.
pub fn grad_check_params<M: Parameterized<f64>>(
    model: &mut M,
    eps: f64,
    coords: Coords,
    loss: impl FnMut(&mut M) -> Result<f64>,
) -> GradCheckReport {
    check_params_impl(model, eps, coords, loss, None::<fn(&M) -> Option<Vec<u64>>>)
}

/// Like [`grad_check_params`], but skips coordinates where either perturbed
/// forward lands on a different activation pattern than the unperturbed one.
/// A central difference across a kink is not a derivative, and in a deep
/// ReLU network a perturbation of 1e-4 crosses one regularly.
pub fn grad_check_params_piecewise<M: Parameterized<f64> + Piecewise>(
    model: &mut M,
    eps: f64,
    coords: Coords,
    loss: impl FnMut(&mut M) -> Result<f64>,
) -> GradCheckReport {
    check_params_impl(model, eps, coords, loss, Some(|m: &M| m.activation_pattern()))
}

fn check_params_impl<M: Parameterized<f64>>(
    model: &mut M,
    eps: f64,
    coords: Coords,
    mut loss: impl FnMut(&mut M) -> Result<f64>,
    pattern: Option<impl Fn(&M) -> Option<Vec<u64>>>,
) -> GradCheckReport {
    let mut snapshot: Vec<(String, Tensor<f64>)> = Vec::new();
    model.visit_params("", &mut |name, p| snapshot.push((name.to_string(), p.grad.clone())));
    let mut tensors = Vec::new();
    let base = match &pattern {
        Some(f) => {
            if let Err(e) = evaluate(&mut || loss(model)) {
                return GradCheckReport { tensors, failure: Some(e) };
            }
            f(model)
        }
        None => None,
    };
    let moved = |m: &M| match (&pattern, &base) {
        (Some(f), Some(b)) => f(m).as_ref() != Some(b),
        _ => false,
    };
    for (t, (name, grad)) in snapshot.iter().enumerate() {
        let mut check =
            TensorCheck { name: name.clone(), max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
        for i in select(grad.len(), coords, t) {
            let mut orig = 0.0;
            with_param(model, t, &mut |p| {
                orig = p.value.data()[i];
                p.value.data_mut()[i] = orig + eps;
            });
            let plus = evaluate(&mut || loss(model));
            let mut kinked = moved(model);
            with_param(model, t, &mut |p| p.value.data_mut()[i] = orig - eps);
            let minus = evaluate(&mut || loss(model));
            kinked |= moved(model);
            with_param(model, t, &mut |p| p.value.data_mut()[i] = orig);
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    tensors.push(check);
                    return GradCheckReport { tensors, failure: Some(e) };
                }
            };
            if kinked {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            check.checked += 1;
        }
        tensors.push(check);
    }
    GradCheckReport { tensors, failure: None }
}
