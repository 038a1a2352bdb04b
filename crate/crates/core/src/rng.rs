//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of an integer key, so
//! any sub-window of an environment, or any single realization of a Monte Carlo
//! run, can be regenerated without replaying a sequential stream.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn fmix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes a key of 64-bit words into a well-mixed 64-bit value.
pub fn keyed(words: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64 ^ (words.len() as u64).wrapping_mul(GOLDEN);
    for &w in words {
        h = fmix(h.wrapping_add(GOLDEN) ^ fmix(w.wrapping_add(GOLDEN)));
    }
    h
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives a child seed, e.g. one per realization of a Monte Carlo run.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    keyed(&[master, tag, index])
}

/// SplitMix64 stream, used where a sequential stream is natural (sampling
/// test matrices, candidate perturbations).
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        fmix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n.saturating_sub(1))
    }
}
