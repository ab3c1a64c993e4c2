//! Shared numeric kernel: dense `f64` matrices, a fixed deterministic RNG,
//! a numerically stable softmax, deterministic top-k selection, and a
//! central-difference gradient checker.
//!
//! Every other module builds on these primitives, which keeps determinism
//! and numeric conventions (row-major layout, `f64` everywhere, documented
//! tie-breaking) in one place.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

use crate::{Error, Result};

/// Numerically stable softmax.
///
/// Subtracts the maximum before exponentiating, so large logits (e.g.
/// `[1000, 0]`) do not overflow; tiny probabilities may underflow to zero.
/// The output sums to 1 within 1e-12.
///
/// Errors on empty input and on non-finite entries.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty slice"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input contains a non-finite entry"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(out)
}

/// Log-softmax, same stability strategy as [`softmax`].
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("log_softmax of an empty slice"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("log_softmax input contains a non-finite entry"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&x| x - max - log_sum).collect())
}

/// Result of [`topk`]: parallel index/value lists sorted by descending value.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Deterministic top-k selection.
///
/// Returns the `k` largest entries sorted by descending value; ties are
/// broken toward the lowest index, so the result is a pure function of the
/// input. Errors when `k` is zero or exceeds the input length, and on
/// non-finite entries.
pub fn topk(values: &[f64], k: usize) -> Result<TopK> {
    if k == 0 || k > values.len() {
        return Err(Error::invalid(format!(
            "topk k={} out of range for length {}",
            k,
            values.len()
        )));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("topk input contains a non-finite entry"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("entries checked finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let vals = order.iter().map(|&i| values[i]).collect();
    Ok(TopK { indices: order, values: vals })
}

/// Checks an analytic gradient against central finite differences.
///
/// For each coordinate `i` the numeric derivative is
/// `(f(x + h e_i) - f(x - h e_i)) / (2h)` and the relative error against
/// `analytic[i]` uses the denominator `max(|numeric|, |analytic|, 1e-8)`.
/// Returns the maximum relative error over all coordinates.
///
/// Errors when `step` is not positive, when lengths differ, or when `f`
/// returns a non-finite value at any probe point.
pub fn grad_check<F>(f: F, analytic: &[f64], point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid(format!("grad_check step must be positive, got {step}")));
    }
    if analytic.len() != point.len() {
        return Err(Error::invalid(format!(
            "grad_check length mismatch: analytic {} vs point {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let hi = f(&probe);
        probe[i] = point[i] - step;
        let lo = f(&probe);
        probe[i] = point[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::numeric(format!(
                "grad_check objective non-finite near coordinate {i}"
            )));
        }
        let numeric = (hi - lo) / (2.0 * step);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-8);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
