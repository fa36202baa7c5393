//! Finite-difference verification of tape gradients.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Checks the tape gradient of a scalar function of several inputs.
pub fn grad_check_many<T, F>(f: F, inputs: &[Tensor<T>], step: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(TensorError::invalid(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| match v.grad() {
                Some(g) => g.to_f64_vec(),
                None => vec![0.0; x.numel()],
            })
            .collect()
    };
    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&vars)?.item()?.as_f64())
    };
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut worst = (0, 0);
    let mut max_rel_error = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let base = x.to_f64_vec();
        let mut err = None;
        let n = numeric_gradient(
            |p| {
                let mut xs = inputs.to_vec();
                xs[k] = Tensor::from_f64(x.shape(), p).expect("shape");
                match eval(&xs) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                }
            },
            &base,
            step,
        );
        if let Some(e) = err {
            return Err(e);
        }
        for (i, (&a, &nv)) in analytic[k].iter().zip(&n).enumerate() {
            let r = relative_error(a, nv);
            if r > max_rel_error || r.is_nan() {
                max_rel_error = if r.is_nan() { f64::INFINITY } else { r };
                worst = (k, i);
            }
        }
        numeric.push(n);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: f64) -> Result<f64>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Result<Var<'t, T>>,
{
    Ok(grad_check_many(|v| f(v[0]), std::slice::from_ref(x), step)?.max_rel_error)
}
