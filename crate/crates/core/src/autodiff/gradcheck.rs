use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns the largest per-coordinate
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::domain("grad_check", format!("epsilon {epsilon} must be > 0")));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone().requires_grad());
    let out = f(&mut tape, leaf)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .ok_or_else(|| Error::Tape("input leaf missing from gradients".into()))?;

    let eval = |values: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(Tensor::new(x.shape().to_vec(), values)?);
        let out = f(&mut tape, leaf)?;
        tape.scalar(out)
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.values().to_vec();
        plus[i] += epsilon;
        let mut minus = x.values().to_vec();
        minus[i] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon);
        let a = analytic.values()[i];
        let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
