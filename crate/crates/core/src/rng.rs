//! Seeded, splittable random number streams.
//!
//! The contract is determinism and splittability: identical seeds yield
//! identical sample sequences, and child streams are a pure function of the
//! parent seed plus an index, independent of how much the parent has been
//! consumed.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 mixing step, used to expand and combine seeds.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream backed by a 256-bit state ChaCha generator.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            seed,
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Derive an independent child stream from this stream's seed and an index.
    ///
    /// Does not consume any state of the parent.
    pub fn split(&self, index: u64) -> Self {
        let mut state = self.seed ^ 0xa076_1d64_78bd_642f;
        let a = splitmix64(&mut state);
        let mut state2 = index.wrapping_add(a);
        RngStream::new(splitmix64(&mut state2))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    /// Uniform draw on (0, 1]; safe as an argument to `ln` or `powf`.
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.uniform()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7);
        let mut b = RngStream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_is_independent_of_parent_state() {
        let mut a = RngStream::new(7);
        let b = RngStream::new(7);
        // consume the parent
        for _ in 0..10 {
            a.next_u64();
        }
        let mut ca = a.split(3);
        let mut cb = b.split(3);
        for _ in 0..100 {
            assert_eq!(ca.next_u64(), cb.next_u64());
        }
    }

    #[test]
    fn split_indices_differ() {
        let a = RngStream::new(7);
        assert_ne!(a.split(0).next_u64(), a.split(1).next_u64());
    }
}
