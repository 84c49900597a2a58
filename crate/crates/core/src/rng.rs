//! Counter-based deterministic random number generator.
//!
//! Each draw applies the SplitMix64 finalizer to `key ^ counter`, so the
//! stream is a pure function of `(key, counter)`. Substreams are derived
//! by hashing a tag into a fresh key, which keeps per-layer / per-timestep
//! streams independent of draw order elsewhere.

use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    key: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng {
            key: mix(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Derive an independent substream keyed by `tag`.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng {
            key: mix(self.key ^ mix(tag.wrapping_mul(GOLDEN))),
            counter: 0,
        }
    }

    /// Derive a substream from a string label (layer name, purpose).
    pub fn fork_named(&self, label: &str) -> Rng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        self.fork(h)
    }

    pub fn state(&self) -> (u64, u64) {
        (self.key, self.counter)
    }

    pub fn from_state(key: u64, counter: u64) -> Rng {
        Rng { key, counter }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key ^ self.counter.wrapping_mul(GOLDEN))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi].
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor::from_vec(shape, data).expect("shape/data agree")
    }

    /// Standard Box-Muller transform; one fresh pair of uniforms per draw
    /// so the stream position stays a pure function of the draw count.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn gaussian(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        assert!(std >= 0.0, "gaussian std must be >= 0");
        let n: usize = shape.iter().product();
        let data = if std == 0.0 {
            vec![mean; n]
        } else {
            (0..n).map(|_| mean + std * self.next_gaussian()).collect()
        };
        Tensor::from_vec(shape, data).expect("shape/data agree")
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn same_seed_same_gaussian_tensor() {
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        assert_eq!(a.gaussian(&[4, 4], 0.5, 2.0), b.gaussian(&[4, 4], 0.5, 2.0));
    }

    #[test]
    fn forks_are_independent_of_parent_position() {
        let mut a = Rng::new(9);
        let f1 = a.fork(7);
        a.next_u64();
        let f2 = a.fork(7);
        assert_eq!(f1, f2);
        assert_ne!(f1, a.fork(8));
    }

    #[test]
    fn zero_std_gives_mean() {
        let mut rng = Rng::new(1);
        let t = rng.gaussian(&[10], 3.25, 0.0);
        assert!(t.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn gaussian_moments_within_clt_bound() {
        let mut rng = Rng::new(1234);
        let n = 1_000_000usize;
        let t = rng.gaussian(&[n], 0.0, 1.0);
        let mean: f64 = t.data().iter().sum::<f64>() / n as f64;
        // 5 standard errors of the mean: 5 / sqrt(1e6) = 0.005
        assert!(mean.abs() < 0.005, "sample mean {}", mean);
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        // SE of sample std is ~ 1/sqrt(2n)
        assert!((var.sqrt() - 1.0).abs() < 5.0 / (2.0 * n as f64).sqrt());
    }

    #[test]
    fn uniform_range() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            let v = rng.uniform(-0.25, 0.25);
            assert!((-0.25..=0.25).contains(&v));
        }
    }
}
