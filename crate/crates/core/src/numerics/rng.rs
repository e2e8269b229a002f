//! Seeded, splittable random numbers.
//!
//! A [`Rng`] is a ChaCha8 generator keyed by a 64-bit seed. Substreams for
//! an index path such as `(layer, batch, probe)` share the key and select a
//! distinct ChaCha stream, so they never overlap and are reproducible in any
//! evaluation order.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Everything needed to resume a stream exactly where it stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_id(path: &[u64]) -> u64 {
    // Stream 0 is reserved for the root generator.
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in path {
        h = mix(h ^ mix(p));
    }
    h | 1
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for an index path, e.g. `&[layer, batch, probe]`.
    /// Depends only on the seed and the path, not on how much of `self` has
    /// been consumed.
    pub fn substream(&self, path: &[u64]) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream_id(path));
        Rng { seed: self.seed, inner }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn state(&self) -> RngState {
        RngState { seed: self.seed, stream: self.inner.get_stream(), word_pos: self.inner.get_word_pos() }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng { seed: state.seed, inner }
    }
}

impl RngCore for Rng {
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

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        assert_eq!(a.normals(100), b.normals(100));
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).normals(10), c.normals(10));
    }

    #[test]
    fn substreams_are_uncorrelated() {
        let root = Rng::new(7);
        let paths: [&[u64]; 4] = [&[0, 0, 0], &[0, 0, 1], &[1, 0, 0], &[0, 1, 0]];
        let draws: Vec<Vec<f64>> = paths.iter().map(|p| root.substream(p).normals(100_000)).collect();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                let r = correlation(&draws[i], &draws[j]);
                assert!(r.abs() < 0.05, "paths {i},{j}: r = {r}");
            }
        }
        let mut consumed = Rng::new(7);
        consumed.normals(5);
        assert_eq!(consumed.substream(&[1, 2]).normals(4), root.substream(&[1, 2]).normals(4));
    }

    #[test]
    fn state_round_trip() {
        let mut a = Rng::new(9).substream(&[3]);
        a.normals(17);
        let mut b = Rng::from_state(a.state());
        assert_eq!(a.normals(20), b.normals(20));
    }
}
