//! Single-head masked attention kernels.

use crate::numkit::{softmax, Matrix};
use crate::{Error, Result};

fn check_shapes(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::invalid(format!(
            "query dim {} does not match key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::invalid(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    if q.rows() == 0 || k.rows() == 0 {
        return Err(Error::invalid("attention needs at least one query and one key"));
    }
    Ok(())
}

/// Shared masked-attention core: `allowed(t, s)` gates whether query `t` may
/// attend key `s`. A query whose mask admits no key gets a zero output row.
pub(crate) fn attend_masked<F>(q: &Matrix, k: &Matrix, v: &Matrix, allowed: F) -> Result<Matrix>
where
    F: Fn(usize, usize) -> bool,
{
    check_shapes(q, k, v)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut scores = Vec::with_capacity(k.rows());
    let mut keep = Vec::with_capacity(k.rows());
    for t in 0..q.rows() {
        scores.clear();
        keep.clear();
        let qt = q.row(t);
        for s in 0..k.rows() {
            if allowed(t, s) {
                let dot: f64 = qt.iter().zip(k.row(s)).map(|(a, b)| a * b).sum();
                scores.push(dot * scale);
                keep.push(s);
            }
        }
        if keep.is_empty() {
            continue; // fully masked row stays zero
        }
        let weights = softmax(&scores)?;
        let row = out.row_mut(t);
        for (w, &s) in weights.iter().zip(&keep) {
            for (o, x) in row.iter_mut().zip(v.row(s)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Full attention: `softmax(Q K^T / sqrt(d)) V`, optionally causal.
///
/// With `causal` set, query `t` attends keys `s <= t`, which requires the
/// query and key counts to match (queries and keys describe the same
/// sequence). Without it every query attends every key.
pub fn attend_full(q: &Matrix, k: &Matrix, v: &Matrix, causal: bool) -> Result<Matrix> {
    if causal && q.rows() != k.rows() {
        return Err(Error::invalid(format!(
            "causal attention needs matching query/key counts, got {} vs {}",
            q.rows(),
            k.rows()
        )));
    }
    attend_masked(q, k, v, |t, s| !causal || s <= t)
}

/// Sliding-window attention over a window of `window` positions.
///
/// Causal, query `t` attends keys `max(0, t-window+1) ..= t`; non-causal,
/// the window is the symmetric band `|t - s| < window`. With
/// `window >= sequence length` the causal form equals causal
/// [`attend_full`].
pub fn attend_sliding(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    window: usize,
    causal: bool,
) -> Result<Matrix> {
    if window == 0 {
        return Err(Error::invalid("sliding window must be at least 1"));
    }
    if q.rows() != k.rows() {
        return Err(Error::invalid(format!(
            "sliding attention needs matching query/key counts, got {} vs {}",
            q.rows(),
            k.rows()
        )));
    }
    attend_masked(q, k, v, |t, s| {
        if causal {
            s <= t && t - s < window
        } else {
            t.abs_diff(s) < window
        }
    })
}
