//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{domain_err, Result};

/// Denominator floor for the elementwise relative error, so that entries
/// whose true gradient is ~0 are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of `f` at `input` against the central
/// difference `(f(x+h) - f(x-h)) / 2h` and returns the largest elementwise
/// relative error `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
///
/// `f` receives a fresh tape and the input leaf and must return a scalar.
pub fn finite_diff_check<F>(f: F, input: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(domain_err!("step h must be positive"));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone().with_requires_grad(true));
    let loss = f(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let zeros = vec![0.0; input.numel()];
    let analytic = grads.wrt(x).unwrap_or(&zeros).to_vec();

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(t.with_requires_grad(true));
        let l = f(&mut tape, x)?;
        tape.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
