//! The one random stream used everywhere in the engine.
//!
//! SplitMix64 is small enough to port exactly to any language, which keeps
//! synthetic bundles, k-means++ seeding and batch shuffling reproducible
//! outside Rust. The derived draws are fixed as follows:
//!
//! * `next_u64`: `state += 0x9E3779B97F4A7C15`, then the standard SplitMix64
//!   finalizer (`xor-shift 30, * 0xBF58476D1CE4E5B9, xor-shift 27,
//!   * 0x94D049BB133111EB, xor-shift 31`).
//! * `next_f64`: top 53 bits of `next_u64` times 2^-53, in `[0, 1)`.
//! * `below(n)`: high 64 bits of the 128-bit product `next_u64 * n`.
//! * `gaussian`: one Box-Muller draw per call,
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)` with `u1`, `u2` consecutive
//!   `next_f64` values. The sine branch is discarded.
//! * `shuffle`: Fisher-Yates from the back, `j = below(i + 1)`.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
