//! Seeded randomness and the sampling distributions the simulator uses.
//!
//! Every random draw flows through a [`SeededRng`]. Entities (nodes,
//! network links, clients) get their own sub-stream derived from the master
//! seed and a stable stream id, so adding an entity never perturbs the draws
//! seen by the others.

use core::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use thiserror::Error;

use crate::time::nanos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DistError {
    #[error("distribution parameters must be positive")]
    NonPositive,
    #[error("zipf exponent must be >= 0 and key count >= 1")]
    BadZipf,
}

/// Stable stream identifiers. The high byte names the entity class.
pub mod stream {
    pub const ELECTION: u64 = 0x01 << 56;
    pub const CLOCK: u64 = 0x02 << 56;
    pub const LINK: u64 = 0x03 << 56;
    pub const WORKLOAD: u64 = 0x04 << 56;
    pub const CLIENT_LINK: u64 = 0x05 << 56;
    pub const DRIFT: u64 = 0x06 << 56;
    pub const SCRIPT: u64 = 0x07 << 56;
    pub const PLAN: u64 = 0x08 << 56;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    /// Independent sub-stream `stream` of master seed `seed`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.random_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl RngCore for SeededRng {
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

/// Lognormal whose own mean and variance (not those of the underlying
/// normal) are the given parameters. `variance_ns2` is in squared nanoseconds.
#[derive(Clone, Copy, Debug)]
pub struct LognormalDelay {
    dist: LogNormal<f64>,
}

impl LognormalDelay {
    pub fn new(mean: Duration, variance_ns2: f64) -> Result<Self, DistError> {
        let mean_ns = nanos(mean) as f64;
        if !(mean_ns > 0.0) || !(variance_ns2 > 0.0) {
            return Err(DistError::NonPositive);
        }
        let cv = num_traits::Float::sqrt(variance_ns2) / mean_ns;
        let dist = LogNormal::from_mean_cv(mean_ns, cv).map_err(|_| DistError::NonPositive)?;
        Ok(LognormalDelay { dist })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Duration {
        let ns = self.dist.sample(rng);
        // Delays are strictly positive.
        Duration::from_nanos((ns as u64).max(1))
    }
}

pub fn sample_lognormal(
    rng: &mut SeededRng,
    mean: Duration,
    variance_ns2: f64,
) -> Result<Duration, DistError> {
    Ok(LognormalDelay::new(mean, variance_ns2)?.sample(rng))
}

/// Exponential inter-arrival gap with the given mean (a Poisson process).
#[derive(Clone, Copy, Debug)]
pub struct PoissonGap {
    dist: Exp<f64>,
}

impl PoissonGap {
    pub fn new(mean_gap: Duration) -> Result<Self, DistError> {
        let mean_ns = nanos(mean_gap) as f64;
        if !(mean_ns > 0.0) {
            return Err(DistError::NonPositive);
        }
        let dist = Exp::new(1.0 / mean_ns).map_err(|_| DistError::NonPositive)?;
        Ok(PoissonGap { dist })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Duration {
        Duration::from_nanos(self.dist.sample(rng) as u64)
    }
}

pub fn sample_interarrival_poisson(
    rng: &mut SeededRng,
    mean_gap: Duration,
) -> Result<Duration, DistError> {
    Ok(PoissonGap::new(mean_gap)?.sample(rng))
}

/// Key index in `[0, n_keys)` with P(k) proportional to `1/(k+1)^a`.
#[derive(Clone, Copy, Debug)]
pub struct ZipfKeys {
    n_keys: u64,
    dist: Zipf<f64>,
}

impl ZipfKeys {
    pub fn new(a: f64, n_keys: u64) -> Result<Self, DistError> {
        if !(a >= 0.0) || n_keys == 0 {
            return Err(DistError::BadZipf);
        }
        let dist = Zipf::new(n_keys as f64, a).map_err(|_| DistError::BadZipf)?;
        Ok(ZipfKeys { n_keys, dist })
    }

    pub fn sample(&self, rng: &mut SeededRng) -> u64 {
        let rank = self.dist.sample(rng) as u64;
        rank.clamp(1, self.n_keys) - 1
    }
}

pub fn sample_zipf(rng: &mut SeededRng, a: f64, n_keys: u64) -> Result<u64, DistError> {
    Ok(ZipfKeys::new(a, n_keys)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn sub_streams_are_independent_and_reproducible() {
        let a: Vec<u64> = (0..8).map({
            let mut r = SeededRng::derive(7, 1);
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = SeededRng::derive(7, 1);
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = SeededRng::derive(7, 2);
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LognormalDelay::new(Duration::ZERO, 1.0).is_err());
        assert!(LognormalDelay::new(Duration::from_millis(1), 0.0).is_err());
        assert!(PoissonGap::new(Duration::ZERO).is_err());
        assert!(ZipfKeys::new(-0.1, 10).is_err());
        assert!(ZipfKeys::new(1.0, 0).is_err());
    }

    #[test]
    fn lognormal_positive_and_deterministic() {
        let d = LognormalDelay::new(Duration::from_micros(191), 391e6).unwrap();
        let mut r1 = SeededRng::new(3);
        let mut r2 = SeededRng::new(3);
        for _ in 0..1000 {
            let x = d.sample(&mut r1);
            assert!(x > Duration::ZERO);
            assert_eq!(x, d.sample(&mut r2));
        }
    }

    #[test]
    fn zipf_range() {
        let z = ZipfKeys::new(1.3, 17).unwrap();
        let mut r = SeededRng::new(9);
        for _ in 0..10_000 {
            assert!(z.sample(&mut r) < 17);
        }
        let one = ZipfKeys::new(2.0, 1).unwrap();
        assert_eq!(one.sample(&mut r), 0);
    }
}
