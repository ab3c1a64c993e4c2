/// Deterministic pseudo-random generator used everywhere in the crate.
///
/// The algorithm is SplitMix64: the 64-bit state advances by the constant
/// `0x9E3779B97F4A7C15` (the golden ratio in 0.64 fixed point) and each
/// output is the finalizer
///
/// ```text
/// z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9;
/// z ^= z >> 27;  z *= 0x94D049BB133111EB;
/// z ^= z >> 31;
/// ```
///
/// applied to the new state. The `u64` stream is pure integer arithmetic, so
/// an identical seed produces an identical stream on every platform, and
/// [`Rng::next_f64`] derives uniforms from it by exact dyadic scaling
/// (`(x >> 11) * 2^-53`), which is equally portable. Gaussian draws go
/// through `ln`/`cos`/`sqrt` and therefore match to within the precision of
/// the platform's libm; the integer and uniform streams are the portable
/// contract.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    /// Creates a generator seeded with `seed`. Equal seeds give equal streams.
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via the Box-Muller transform (cosine branch).
    ///
    /// Consumes exactly two `u64` draws; nothing is cached between calls, so
    /// the mapping from the integer stream to the normal stream is fixed.
    pub fn normal(&mut self) -> f64 {
        // Shift u1 into (0, 1] so the logarithm is always finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer draw in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below needs a nonzero bound");
        (self.next_u64() % n as u64) as usize
    }

    /// Derives an independent generator for a labelled sub-stream.
    ///
    /// Used when one seed has to fan out into several reproducible streams
    /// (e.g. a training stream and a held-out stream).
    pub fn fork(&self, label: u64) -> Rng {
        let mut mixer = Rng::new(self.state ^ label.wrapping_mul(0xA076_1D64_78BD_642F));
        Rng::new(mixer.next_u64())
    }
}
