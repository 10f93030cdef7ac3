//! Reproducible randomness.
//!
//! Every stream is a ChaCha8 generator. Per-entity streams are seeded from
//! `splitmix64(seed ^ splitmix64(entity))`, so the stream an entity sees does
//! not depend on how many other entities exist.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for node placement.
pub const PLACEMENT_STREAM: u64 = u64::MAX;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for `entity` derived from the simulation seed.
    pub fn for_entity(seed: u64, entity: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(entity)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Bernoulli draw: true with probability `p` (clamped to [0, 1]).
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        // 53-bit uniform in [0, 1)
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        u < p
    }

    /// Uniform integer in `[0, max]`.
    pub fn upto(&mut self, max: u64) -> u64 {
        if max == 0 {
            0
        } else {
            self.inner.gen_range(0..=max)
        }
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = {
            let mut r = SimRng::for_entity(42, 7);
            (0..16).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = SimRng::for_entity(42, 7);
            (0..16).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn entity_streams_differ() {
        let mut a = SimRng::for_entity(42, 1);
        let mut b = SimRng::for_entity(42, 2);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn stream_is_pinned() {
        // Guards against silent generator changes across dependency upgrades.
        let mut r = SimRng::new(0);
        let first = r.next_u64();
        let mut again = SimRng::new(0);
        assert_eq!(first, again.next_u64());
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn chance_extremes() {
        let mut r = SimRng::new(1);
        assert!((0..1000).all(|_| !r.chance(0.0)));
        assert!((0..1000).all(|_| r.chance(1.0)));
    }
}
