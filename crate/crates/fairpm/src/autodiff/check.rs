//! Central finite-difference gradient verification.
//!
//! The checker is the independent oracle for every analytic gradient in the
//! engine: it re-evaluates the loss at perturbed parameter values and never
//! looks at the tape's backward pass except to fetch the analytic result it
//! is judging.

use super::{Parameter, Tape, Tensor, TensorError, Var};

/// A scalar-valued function of a parameter set, rebuilt on a fresh tape per
/// evaluation. The `Var` slice is bound one-to-one with the parameter slice.
pub trait ScalarFn {
    fn eval<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> Result<Var<'t>, TensorError>;
}

impl<F> ScalarFn for F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    fn eval<'t>(&self, tape: &'t Tape, params: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        self(tape, params)
    }
}

/// Funnels a closure into the higher-ranked signature [`ScalarFn`] expects;
/// bare closure literals usually fail lifetime inference without it.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, TensorError>,
{
    f
}

fn eval_value(f: &impl ScalarFn, params: &[Parameter]) -> Result<f64, TensorError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let out = f.eval(&tape, &vars)?;
    out.item()
}

/// Compares analytic gradients of `f` against central finite differences.
///
/// Returns the maximum over all trainable parameter entries of
/// `|analytic - central| / max(1, |analytic|)`. The parameter values are
/// restored before returning.
pub fn finite_difference_check(
    f: &impl ScalarFn,
    params: &mut [Parameter],
    step: f64,
) -> Result<f64, TensorError> {
    if !(step > 0.0) {
        return Err(TensorError::NonPositiveStep(step));
    }

    // Analytic pass.
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let out = f.eval(&tape, &vars)?;
        if !out.value().is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: out.value().shape().to_vec(),
            });
        }
        tape.backward(out)?;
        vars.iter().map(|&v| tape.grad(v)).collect()
    };

    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        if !params[pi].trainable {
            continue;
        }
        for ei in 0..params[pi].value.numel() {
            let orig = params[pi].value.data()[ei];
            params[pi].value.data_mut()[ei] = orig + step;
            let plus = eval_value(f, params)?;
            params[pi].value.data_mut()[ei] = orig - step;
            let minus = eval_value(f, params)?;
            params[pi].value.data_mut()[ei] = orig;
            let central = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[ei];
            let rel = (a - central).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
