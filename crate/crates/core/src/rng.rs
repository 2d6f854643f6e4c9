//! Splittable, counter-based random streams.
//!
//! Every random draw in the crate comes from a [`StreamRng`] derived from a
//! master seed and a path of stream tags (`"train"`, `"test"`, batch index,
//! slot index, chain index, ...). Two streams with different paths are
//! statistically independent; the same path always replays the same numbers,
//! independent of how many other streams were consumed before it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// A named position in the stream tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    state: [u64; 4],
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        let a = splitmix(seed);
        let b = splitmix(a ^ 0x5151_5151);
        let c = splitmix(b ^ 0xA5A5_A5A5);
        let d = splitmix(c ^ 0x3C3C_3C3C);
        Self { state: [a, b, c, d] }
    }

    fn mix(&self, word: u64) -> Self {
        let mut s = self.state;
        for (i, lane) in s.iter_mut().enumerate() {
            *lane = splitmix(*lane ^ word.rotate_left(17 * i as u32) ^ (i as u64));
        }
        Self { state: s }
    }

    pub fn tag(&self, tag: &str) -> Self {
        self.mix(fnv1a(tag.as_bytes()) ^ 0x7461_6700_0000_0000)
    }

    pub fn index(&self, idx: u64) -> Self {
        self.mix(splitmix(idx) ^ 0x6964_7800_0000_0000)
    }

    pub fn rng(&self) -> StreamRng {
        let mut seed = [0u8; 32];
        for (i, lane) in self.state.iter().enumerate() {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&lane.to_le_bytes());
        }
        StreamRng { inner: ChaCha20Rng::from_seed(seed) }
    }
}

/// ChaCha20 stream with convenience samplers.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey::root(seed).rng()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Draws from a categorical distribution given unnormalized log weights.
    pub fn categorical_logits(&mut self, logits: &[f64]) -> usize {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = self.inner.random::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return i;
            }
            u -= wi;
        }
        w.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_path_replays() {
        let k = StreamKey::root(7).tag("train").index(3).index(11);
        let a: Vec<f64> = k.rng().normal_vec(8);
        let b: Vec<f64> = k.rng().normal_vec(8);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_tags_differ() {
        let root = StreamKey::root(7);
        assert_ne!(root.tag("train"), root.tag("test"));
        assert_ne!(root.index(0), root.index(1));
        assert_ne!(root.tag("a").index(1), root.index(1).tag("a"));
        let a = root.tag("train").rng().normal();
        let b = root.tag("test").rng().normal();
        assert_ne!(a, b);
    }

    #[test]
    fn int_inclusive_covers_endpoints() {
        let mut r = StreamRng::from_seed(1);
        let mut seen = [false; 3];
        for _ in 0..200 {
            seen[r.int_inclusive(0, 2)] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn permutation_is_bijection() {
        let mut r = StreamRng::from_seed(3);
        let mut p = r.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
