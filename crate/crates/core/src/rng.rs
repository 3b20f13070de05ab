//! Seeded, bit-reproducible randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`]:
//!
//! * key: the 32-byte ChaCha key is four consecutive SplitMix64 outputs
//!   seeded with the user seed, each written little-endian;
//! * stream: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`, stream 0);
//! * integers below `n`: Lemire's multiply-and-reject on one `next_u64`;
//! * unit reals: the top 53 bits of `next_u64` times `2^-53`.
//!
//! Sub-seeds for repetitions are `derive_seed(master, index)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 step applied to `state`, returning the output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for repetition `index` of a sweep keyed by `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut s = index;
    let h = splitmix64(&mut s);
    let mut t = master ^ h;
    splitmix64(&mut t)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        SeededRng { inner: ChaCha8Rng::from_seed(key) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform real in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fair sign: `+1.0` or `-1.0`.
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}
