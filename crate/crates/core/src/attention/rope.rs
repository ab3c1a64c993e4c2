//! Rotary position embeddings: pairwise 2-D rotations whose angles grow
//! linearly with position at per-pair frequencies `base^(-2j/head_dim)`.

use crate::numkit::Matrix;
use crate::{Error, Result};

/// Rotary embedding configuration for one head dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    base: f64,
    head_dim: usize,
}

impl RopeConfig {
    /// `head_dim` must be even (rotations act on coordinate pairs) and
    /// `base` positive. Raising `base` slows every nonzero-frequency pair's
    /// rotation, which is the standard long-context adjustment.
    pub fn new(base: f64, head_dim: usize) -> Result<Self> {
        if base <= 0.0 || !base.is_finite() {
            return Err(Error::invalid(format!("rope base must be positive and finite, got {base}")));
        }
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("head_dim must be even and nonzero, got {head_dim}")));
        }
        Ok(RopeConfig { base, head_dim })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Rotation frequency of coordinate pair `j` (`0 <= j < head_dim/2`):
    /// `base^(-2j/head_dim)`. Pair 0 always has frequency 1; higher pairs
    /// rotate slower, and more slowly still for larger bases.
    pub fn pair_frequency(&self, j: usize) -> f64 {
        debug_assert!(j < self.head_dim / 2);
        self.base.powf(-2.0 * j as f64 / self.head_dim as f64)
    }

    /// Rotation angle of pair `j` at `position`.
    pub fn angle(&self, position: usize, j: usize) -> f64 {
        position as f64 * self.pair_frequency(j)
    }
}

/// Applies rotary embeddings to each row of `vectors` at the corresponding
/// entry of `positions`.
///
/// Row `t` is treated as `head_dim/2` coordinate pairs `(x_{2j}, x_{2j+1})`,
/// each rotated by `positions[t] * base^(-2j/head_dim)`. Rotations preserve
/// norms, position 0 is the identity, and scores between rotated vectors
/// depend only on relative positions.
pub fn rope_apply(vectors: &Matrix, positions: &[usize], config: &RopeConfig) -> Result<Matrix> {
    if vectors.cols() != config.head_dim {
        return Err(Error::invalid(format!(
            "vectors have {} columns but rope head_dim is {}",
            vectors.cols(),
            config.head_dim
        )));
    }
    if positions.len() != vectors.rows() {
        return Err(Error::invalid(format!(
            "{} positions supplied for {} rows",
            positions.len(),
            vectors.rows()
        )));
    }
    let mut out = vectors.clone();
    for (t, &pos) in positions.iter().enumerate() {
        rope_rotate_row(out.row_mut(t), pos, config);
    }
    Ok(out)
}

/// In-place rotation of a single row; shared by the matrix path and the
/// per-token decode path.
pub(crate) fn rope_rotate_row(row: &mut [f64], position: usize, config: &RopeConfig) {
    debug_assert_eq!(row.len(), config.head_dim);
    for j in 0..config.head_dim / 2 {
        let angle = config.angle(position, j);
        let (sin, cos) = angle.sin_cos();
        let x = row[2 * j];
        let y = row[2 * j + 1];
        row[2 * j] = x * cos - y * sin;
        row[2 * j + 1] = x * sin + y * cos;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn position_zero_is_identity() {
        let mut rng = Rng::new(2);
        let v = Matrix::random(3, 8, 1.0, &mut rng);
        let cfg = RopeConfig::new(10_000.0, 8).unwrap();
        let r = rope_apply(&v, &[0, 0, 0], &cfg).unwrap();
        assert_eq!(r.as_slice(), v.as_slice());
    }

    #[test]
    fn rotations_preserve_norms() {
        let mut rng = Rng::new(5);
        let v = Matrix::random(6, 16, 1.0, &mut rng);
        let cfg = RopeConfig::new(10_000.0, 16).unwrap();
        let r = rope_apply(&v, &[0, 3, 17, 100, 1000, 65_535], &cfg).unwrap();
        for t in 0..6 {
            let before = dot(v.row(t), v.row(t)).sqrt();
            let after = dot(r.row(t), r.row(t)).sqrt();
            assert!((before - after).abs() < 1e-12, "row {t}: {before} vs {after}");
        }
    }

    #[test]
    fn scores_depend_only_on_relative_position() {
        let mut rng = Rng::new(9);
        let cfg = RopeConfig::new(10_000.0, 16).unwrap();
        for _ in 0..100 {
            let q = Matrix::random(1, 16, 1.0, &mut rng);
            let k = Matrix::random(1, 16, 1.0, &mut rng);
            let m = rng.below(512);
            let n = rng.below(512);
            let s = rng.below(512);
            let qm = rope_apply(&q, &[m], &cfg).unwrap();
            let kn = rope_apply(&k, &[n], &cfg).unwrap();
            let qms = rope_apply(&q, &[m + s], &cfg).unwrap();
            let kns = rope_apply(&k, &[n + s], &cfg).unwrap();
            let a = dot(qm.row(0), kn.row(0));
            let b = dot(qms.row(0), kns.row(0));
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn doubling_the_base_never_speeds_up_any_pair() {
        let d = 32;
        let base = 10_000.0;
        let lo = RopeConfig::new(base, d).unwrap();
        let hi = RopeConfig::new(2.0 * base, d).unwrap();
        let pos = 12_345;
        for j in 0..d / 2 {
            let a = lo.angle(pos, j);
            let b = hi.angle(pos, j);
            assert!(b <= a, "pair {j}: {b} > {a}");
            if j > 0 {
                // Every pair past the first rotates strictly slower.
                assert!(b < a, "pair {j}: {b} not < {a}");
            }
        }
    }

    #[test]
    fn validates_dimensions() {
        assert!(RopeConfig::new(10_000.0, 7).is_err());
        assert!(RopeConfig::new(10_000.0, 0).is_err());
        assert!(RopeConfig::new(0.0, 8).is_err());
        assert!(RopeConfig::new(-1.0, 8).is_err());
        let cfg = RopeConfig::new(10_000.0, 8).unwrap();
        let v = Matrix::zeros(2, 6);
        assert!(rope_apply(&v, &[0, 1], &cfg).is_err());
        let v = Matrix::zeros(2, 8);
        assert!(rope_apply(&v, &[0], &cfg).is_err());
    }
}
