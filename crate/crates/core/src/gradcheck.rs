//! Central finite-difference validation of tape gradients.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it checks.

use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Default acceptance threshold on [`relative_error`].
pub const TOLERANCE: f64 = 1e-4;

/// `max|a − n| / max(max|a|, max|n|, 1e-8)`.
///
/// Normalizing by the largest magnitude keeps entries whose true gradient is
/// zero from dominating the error.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| libm::fabs(*v))
        .fold(1e-8, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| libm::fabs(a - n))
        .fold(0.0, f64::max)
        / scale
}

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Relative error for each input, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Evaluates the scalar built by `build` with the given input values.
pub fn evaluate(
    inputs: &[Tensor],
    build: &impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares reverse-mode gradients of a scalar graph with central
/// differences for every input tensor.
pub fn check_gradients(
    inputs: &[Tensor],
    step: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = match grads.get(*var) {
            Some(g) => g.data().to_vec(),
            None => alloc::vec![0.0; inputs[i].numel()],
        };
        let mut numeric = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let original = probe[i].data()[j];
            probe[i].data_mut()[j] = original + step;
            let plus = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = original - step;
            let minus = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = original;
            numeric.push((plus - minus) / (2.0 * step));
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    let max_rel_err = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_err,
    })
}

/// Reduces an arbitrary tensor to a scalar with fixed pseudo-random weights,
/// so every output element contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::new([3], alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let report = check_gradients(&[x], STEP, |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.passes(1e-8), "{report:?}");
    }

    #[test]
    fn relative_error_scales_by_largest_magnitude() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[10.0, 0.1], &[10.0, 0.2]) - 0.01).abs() < 1e-12);
    }
}
