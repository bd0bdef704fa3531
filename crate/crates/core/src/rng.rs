//! Counter-based random streams.
//!
//! Every simulation draws from a stream identified by a path of integers
//! (seed, run, round, candidate, continuation, replicate). A stream's output
//! depends only on that path, never on which thread evaluates it or in what
//! order, so parallel evaluation reproduces sequential results bit for bit.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream domains, so the execution and planning trees never collide.
pub mod domain {
    pub const EXECUTION: u64 = 1;
    pub const PLANNING: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SYNTHETIC: u64 = 4;
}

/// Identifier of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ 0x6A09_E667_F3BC_C908))
    }

    /// Key of the `index`-th sub-stream.
    #[inline]
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(index.wrapping_add(GOLDEN))))
    }

    pub fn rng(self) -> SimRng {
        SimRng { state: self.0 }
    }
}

/// SplitMix64 generator. Not cryptographically secure.
#[derive(Clone, Debug)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    #[inline]
    pub fn next_raw(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_raw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n`; `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_raw() as u128 * n as u128) >> 64) as usize
    }
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_raw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_raw()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_raw().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
