//! Central finite differences against reverse-mode gradients.

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const GRADIENT_SCALE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Fourth-order central-difference gradient of a scalar function of a flat
/// buffer: `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        let mut at = |offset: f64| {
            probe[i] = orig + offset;
            f(&probe)
        };
        let (p2, p1, m1, m2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
        probe[i] = orig;
        out.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps));
    }
    Ok(out)
}

/// Largest elementwise relative error between the tape gradient of `f` at `x`
/// and its central-difference estimate.
///
/// Each entry is compared with [`relative_error`], except that the
/// denominator never drops below `GRADIENT_SCALE_FLOOR` times the largest
/// `|a| + |n|` over the whole gradient, so entries that are zero up to
/// rounding do not dominate.
pub fn grad_check<F>(f: F, x: &Array, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.variable(x.clone());
    let root = f(&mut tape, input)?;
    let analytic = tape.backward(root)?.wrt(input);

    let shape = x.shape().to_vec();
    let eval = |data: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let input = tape.constant(Array::new(shape.clone(), data.to_vec())?);
        let root = f(&mut tape, input)?;
        tape.value(root).item()
    };
    let numeric = numerical_gradient(eval, x.data(), eps)?;
    Ok(max_relative_error(analytic.data(), &numeric))
}

/// The comparison [`grad_check`] applies to a whole gradient vector.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| a.abs() + n.abs())
        .fold(0.0, f64::max);
    let floor = (GRADIENT_SCALE_FLOOR * scale).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .fold(0.0, f64::max)
}
