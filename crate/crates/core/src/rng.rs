//! Counter-based 64-bit generator used for every fixture and sweep.
//!
//! The n-th output (n = 1, 2, ...) of a stream with seed `s` is
//!
//! ```text
//! z = s + n * 0x9E3779B97F4A7C15            (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! out = z ^ (z >> 31)
//! ```
//!
//! Derived values:
//! * `next_f64`: `(out >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * `next_i8`: low 8 bits of `out` as two's complement.
//! * `below(n)`: `out % n`.
//! * `gaussian()`: Box-Muller with `u1 = 1 - next_f64()`, `u2 = next_f64()`,
//!   returning `sqrt(-2 ln u1) * cos(2 pi u2)`.
//! * `derive(seed, stream)`: seed of a sub-stream, the first output of the
//!   generator seeded with `seed ^ (stream * 0xD1B54A32D192ED03)`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn derive(seed: u64, stream: u64) -> u64 {
        SplitMix64::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_i8(&mut self) -> i8 {
        self.next_u64() as u8 as i8
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_i32(&mut self, lo: i32, hi: i32) -> i32 {
        lo + self.below((hi - lo + 1) as u64) as i32
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
