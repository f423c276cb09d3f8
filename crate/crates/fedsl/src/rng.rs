//! Deterministic, label-keyed random number streams.
//!
//! Every source of randomness in a simulation is a named stream derived from
//! the root seed and a semantic label ("loss.up.3", "init", "data", ...).
//! Draws use a counter-based construction: the i-th value of a stream is a
//! pure function of (root seed, label, i), so adding a new consumer of
//! randomness never perturbs existing streams.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective scramble with good avalanche behavior.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A named, individually reproducible random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    stream_seed: u64,
    counter: u64,
}

impl RngStream {
    /// Creates the stream identified by `(root_seed, label)`.
    pub fn new(root_seed: u64, label: &str) -> Result<Self> {
        if label.is_empty() {
            return Err(Error::validation("rng stream label must be nonempty"));
        }
        Ok(RngStream {
            stream_seed: mix(mix(root_seed) ^ label_hash(label)),
            counter: 0,
        })
    }

    /// Next raw 64-bit draw. Value i is `mix(stream_seed + i*GOLDEN)`.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.stream_seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`; safe as a log argument.
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let v = (self.next_f64() * n as f64) as usize;
        v.min(n - 1)
    }

    /// Standard normal draw (Box-Muller; consumes exactly two raw draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Gamma(shape, 1) draw via Marsaglia-Tsang, with the alpha<1 boost.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be > 0");
        if shape < 1.0 {
            let boost = self.next_f64_open().powf(1.0 / shape);
            return boost * self.gamma(shape + 1.0);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.next_f64_open();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Spec-level constructor, mirroring `RngStream::new`.
pub fn rng_stream(root_seed: u64, label: &str) -> Result<RngStream> {
    RngStream::new(root_seed, label)
}

/// Derives a child root seed from a root seed and an integer tag.
/// Used to give sub-simulations (clusters, sweep cells) independent roots.
pub fn derive_seed(root_seed: u64, tag: u64) -> u64 {
    mix(mix(root_seed).wrapping_add(tag.wrapping_mul(GOLDEN)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_label_repeat_exactly() {
        let mut a = RngStream::new(42, "chan.3").unwrap();
        let mut b = RngStream::new(42, "chan.3").unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_labels_diverge() {
        let mut a = RngStream::new(42, "chan.3").unwrap();
        let mut b = RngStream::new(42, "chan.4").unwrap();
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 3);
    }

    #[test]
    fn empty_label_rejected() {
        assert!(RngStream::new(0, "").is_err());
    }

    #[test]
    fn uniform_mean_near_half() {
        let mut s = RngStream::new(7, "mc").unwrap();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| s.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(11, "normal").unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut s = RngStream::new(3, "gamma").unwrap();
        for &shape in &[0.3, 1.0, 4.5] {
            let n = 50_000;
            let mean = (0..n).map(|_| s.gamma(shape)).sum::<f64>() / n as f64;
            assert!(
                (mean - shape).abs() < 0.05 * shape.max(1.0),
                "shape {shape} mean {mean}"
            );
        }
    }
}
