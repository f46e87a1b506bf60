use serde::{Deserialize, Serialize};

use crate::textmodel::BOS_ID;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 output function applied to `state + golden gamma`.
#[inline]
pub fn splitmix64_mix(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// splitmix64 stream generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64_mix(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound` by multiply-shift.
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}

/// Maps a 64-bit hash into the open interval (0, 1) using its top 52 bits,
/// so both ends stay exactly representable.
#[inline]
pub fn open_unit(h: u64) -> f64 {
    ((h >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// The secret watermark key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WatermarkKey(pub u64);

impl WatermarkKey {
    pub fn secret(self) -> u64 {
        self.0
    }
}

/// Seed for the per-step randomness: a splitmix64 chain over the key, then
/// each context id in order. An empty context hashes as `[<s>]`.
pub fn hash_context(key: WatermarkKey, context_ids: &[u32]) -> u64 {
    let mut h = splitmix64_mix(key.0);
    if context_ids.is_empty() {
        return splitmix64_mix(h ^ BOS_ID as u64);
    }
    for &id in context_ids {
        h = splitmix64_mix(h ^ id as u64);
    }
    h
}

/// Chain hash over arbitrary 64-bit words, same construction as [`hash_context`].
pub fn hash_words(key: WatermarkKey, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64_mix(key.0), |h, &w| splitmix64_mix(h ^ w))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference splitmix64 written from the published algorithm, independent
    /// of the helpers above.
    struct Reference(u64);

    impl Reference {
        fn next(&mut self) -> u64 {
            self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^ (z >> 31)
        }
    }

    #[test]
    fn stream_matches_published_vector() {
        // First outputs of splitmix64 seeded with 0.
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(g.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(g.next_u64(), 0x06c45d188009454f);
    }

    #[test]
    fn key_zero_bos_context_matches_reference_chain() {
        let first = Reference(0).next();
        let expected = Reference(first ^ BOS_ID as u64).next();
        assert_eq!(hash_context(WatermarkKey(0), &[BOS_ID]), expected);
        assert_eq!(hash_context(WatermarkKey(0), &[]), expected);
    }

    #[test]
    fn hashing_is_deterministic() {
        let k = WatermarkKey(42);
        assert_eq!(hash_context(k, &[5, 9]), hash_context(k, &[5, 9]));
    }

    #[test]
    fn one_id_change_changes_the_seed() {
        let mut g = SplitMix64::new(7);
        let k = WatermarkKey(99);
        for _ in 0..1000 {
            let a = g.next_below(50_000) as u32;
            let mut b = g.next_below(50_000) as u32;
            if b == a {
                b = a + 1;
            }
            assert_ne!(hash_context(k, &[a]), hash_context(k, &[b]));
        }
    }

    #[test]
    fn open_unit_never_hits_the_boundary() {
        assert!(open_unit(0) > 0.0);
        assert!(open_unit(u64::MAX) < 1.0);
    }
}
