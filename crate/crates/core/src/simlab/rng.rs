//! Counter-based random stream.
//!
//! A stream is keyed by a tuple of integers. The key is folded with the
//! SplitMix64 finalizer: `k = mix(seed)`, then `k = mix(k ^ part)` for each
//! further part. Draw `i` (counting from 0) is `mix(k + (i + 1) * 0x9E3779B97F4A7C15)`
//! with wrapping arithmetic, where
//!
//! ```text
//! mix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!          z ^= z >> 27; z *= 0x94D049BB133111EB;
//!          z ^ (z >> 31)
//! ```
//!
//! Uniform floats take the top 53 bits: `(x >> 11) * 2^-53`. Any language
//! with 64-bit wrapping integers reproduces the same sequences.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purposes of the draws made for one simulated trace or round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Hit = 1,
    Distractor = 2,
    Entropy = 3,
    Background = 4,
    SharedFailure = 5,
    Coverage = 6,
    Overconfidence = 7,
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, parts: &[u64]) -> Self {
        let key = parts.iter().fold(mix(seed), |k, &p| mix(k ^ p));
        Self { key, counter: 0 }
    }

    /// Stream for one (trial, round, sample, purpose) cell.
    pub fn cell(seed: u64, trial: u64, round: u64, sample: u64, purpose: Purpose) -> Self {
        Self::new(seed, &[trial, round, sample, purpose as u64])
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
