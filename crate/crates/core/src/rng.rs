//! Counter-based, splittable random streams.
//!
//! A [`RngStream`] is a 256-bit key. Child streams are derived by hashing the
//! parent key with a tag, so any (seed, point, repetition, batch, layer, role)
//! path names an independent stream regardless of evaluation order. Drawing
//! from a stream runs ChaCha8 keyed by it, starting at block counter zero.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tags for the tensor roles that draw noise.
pub mod role {
    pub const ACTIVATION: u64 = 0xA11;
    pub const WEIGHT: u64 = 0xB22;
    pub const BIAS: u64 = 0xC33;
    pub const FLIP_SET: u64 = 0xF1;
    pub const FLIP_CLEAR: u64 = 0xF2;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: [u64; 4],
}

impl RngStream {
    pub fn new(seed: u64) -> RngStream {
        let mut key = [0u64; 4];
        let mut state = seed;
        for (i, k) in key.iter_mut().enumerate() {
            state = splitmix64(state ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            *k = state;
        }
        RngStream { key }
    }

    /// Independent child stream named by `tag`.
    pub fn derive(&self, tag: u64) -> RngStream {
        let mut key = [0u64; 4];
        let mut acc = splitmix64(tag ^ 0x6A09_E667_F3BC_C908);
        for (i, k) in key.iter_mut().enumerate() {
            acc = splitmix64(acc ^ self.key[i]);
            *k = acc ^ splitmix64(self.key[(i + 1) % 4].rotate_left(17) ^ tag);
        }
        RngStream { key }
    }

    /// Child stream named by a path of tags.
    pub fn derive_path(&self, tags: &[u64]) -> RngStream {
        tags.iter().fold(*self, |s, &t| s.derive(t))
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        for (chunk, k) in seed.chunks_exact_mut(8).zip(self.key) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// Generator positioned `word_pos` 32-bit words into the stream.
    pub fn generator_at(&self, word_pos: u128) -> ChaCha8Rng {
        let mut g = self.generator();
        g.set_word_pos(word_pos);
        g
    }

    pub fn key(&self) -> [u64; 4] {
        self.key
    }
}

/// Uniform double in (0, 1], never zero so it is safe under `ln`.
#[inline]
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal deviate by Box-Muller.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let a = RngStream::new(7).derive_path(&[1, 2, 3]);
        let b = RngStream::new(7).derive(1).derive(2).derive(3);
        assert_eq!(a, b);
        let xa: Vec<u64> = (0..8)
            .map({
                let mut g = a.generator();
                move |_| g.next_u64()
            })
            .collect();
        let mut g = b.generator();
        let xb: Vec<u64> = (0..8).map(|_| g.next_u64()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn children_differ() {
        let root = RngStream::new(0);
        let mut keys = std::collections::HashSet::new();
        for tag in 0..1000u64 {
            assert!(keys.insert(root.derive(tag).key()));
        }
        assert_ne!(root.derive(1).derive(2), root.derive(2).derive(1));
        assert_ne!(RngStream::new(1), RngStream::new(2));
    }

    #[test]
    fn word_position_is_counter_based() {
        let s = RngStream::new(99);
        let mut g = s.generator();
        let mut all = vec![];
        for _ in 0..20 {
            all.push(g.next_u32());
        }
        let mut h = s.generator_at(13);
        assert_eq!(h.next_u32(), all[13]);
    }

    #[test]
    fn open_unit_bounds_and_mean() {
        let mut g = RngStream::new(3).generator();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = open_unit(&mut g);
            assert!(u > 0.0 && u <= 1.0);
            sum += u;
        }
        assert!((sum / n as f64 - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / n as f64).sqrt() * 2.0);
    }
}
