//! The one random number generator used everywhere in the toolkit.
//!
//! Every random draw (frame permutations, style choices, flow jitter, planted
//! activations, random masks) comes out of a [`SplitMix64`] stream derived
//! from a single user seed. The algorithm is small enough to port verbatim,
//! so a manifest produced here can be regenerated from any language:
//!
//! ```text
//! GAMMA = 0x9E3779B97F4A7C15
//! mix64(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//! next():                       # counter-based: n-th output = mix64(key + n*GAMMA)
//!     state += GAMMA; return mix64(state)
//!
//! fork(key, label) = mix64(key ^ fnv1a64(utf8(label)))
//! fork_index(key, i) = mix64(key ^ mix64(i + GAMMA))
//!
//! uniform f64 in [0,1)  = (next() >> 11) * 2^-53
//! below(n), n > 0       = Lemire multiply-shift with rejection:
//!     m = next() * n (128-bit); if low64(m) < n:
//!         t = (2^64 - n) mod n; while low64(m) < t: m = next() * n
//!     return high64(m)
//! shuffle(xs)           = for i = len-1 down to 1: swap(xs[i], xs[below(i+1)])
//! ```
//!
//! All arithmetic is wrapping 64-bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A 64-bit seed. Serialized as a decimal string so JSON consumers that
/// parse numbers as doubles do not lose precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u64);

impl Seed {
    /// Derive an independent child seed for a named stream.
    pub fn fork(self, label: &str) -> Seed {
        Seed(mix64(self.0 ^ fnv1a64(label.as_bytes())))
    }

    /// Derive an independent child seed for the `index`-th item of a stream.
    pub fn fork_index(self, index: u64) -> Seed {
        Seed(mix64(self.0 ^ mix64(index.wrapping_add(GAMMA))))
    }

    pub fn rng(self) -> SplitMix64 {
        SplitMix64::new(self.0)
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Seed {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(Seed)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(u64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Number(n) => Ok(Seed(n)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let mut m = (self.next_u64() as u128) * (n as u128);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = (self.next_u64() as u128) * (n as u128);
            }
        }
        (m >> 64) as u64
    }

    /// Fisher–Yates shuffle, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl rand_core::RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (SplitMix64::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        SplitMix64::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stream() {
        // Reference outputs of SplitMix64 from seed 0 (Vigna's C implementation).
        let mut r = SplitMix64::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(r.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = SplitMix64::new(42);
        for n in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(r.below(n) < n);
            }
        }
    }

    #[test]
    fn below_is_roughly_uniform() {
        let mut r = SplitMix64::new(5);
        let mut hist = [0usize; 6];
        for _ in 0..60_000 {
            hist[r.below(6) as usize] += 1;
        }
        for h in hist {
            assert!((9_500..10_500).contains(&h), "{hist:?}");
        }
    }

    #[test]
    fn forks_are_distinct_and_stable() {
        let s = Seed(9);
        assert_eq!(s.fork("pairs"), s.fork("pairs"));
        assert_ne!(s.fork("pairs"), s.fork("oracle"));
        assert_ne!(s.fork_index(0), s.fork_index(1));
    }

    #[test]
    fn seed_serializes_as_decimal_string() {
        let big = Seed(u64::MAX);
        let text = serde_json::to_string(&big).unwrap();
        assert_eq!(text, "\"18446744073709551615\"");
        let back: Seed = serde_json::from_str(&text).unwrap();
        assert_eq!(back, big);
        let from_number: Seed = serde_json::from_str("12").unwrap();
        assert_eq!(from_number, Seed(12));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = SplitMix64::new(3);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
