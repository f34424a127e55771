//! Seeded Monte Carlo plumbing.
//!
//! Samples are split into fixed-size batches. Batch `b` draws from the
//! ChaCha stream `b` of the run seed, so the result does not depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::par::{self, Execution};

/// Samples per batch.
pub const BATCH: u64 = 1 << 16;

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub samples: u64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

impl McSettings {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            ..Self::default()
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn batches(&self) -> Vec<(u64, u64)> {
        let n = self.samples.div_ceil(BATCH);
        (0..n)
            .map(|b| (b, BATCH.min(self.samples - b * BATCH)))
            .collect()
    }
}

/// Bernoulli estimate with Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn estimate(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.successes as f64 / self.trials as f64
    }

    pub fn std_error(&self) -> f64 {
        let p = self.estimate();
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }

    /// Wilson score interval for quantile `z`.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        let n = self.trials as f64;
        if n == 0.0 {
            return (0.0, 1.0);
        }
        let p = self.estimate();
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        ((centre - half).max(0.0), (centre + half).min(1.0))
    }

    pub fn wilson99(&self) -> (f64, f64) {
        self.wilson(Z_99)
    }
}

/// Sample mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl MeanEstimate {
    /// Normal-approximation interval at quantile `z`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.std_error, self.mean + z * self.std_error)
    }
}

/// Counts samples for which `event` holds.
pub fn count<F>(settings: &McSettings, event: F) -> Proportion
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync + Send,
{
    let batches = settings.batches();
    let counts = par::map_slice(settings.exec, &batches, |&(b, size)| {
        let mut rng = stream_rng(settings.seed, b);
        (0..size).filter(|_| event(&mut rng)).count() as u64
    });
    Proportion {
        successes: counts.iter().sum(),
        trials: settings.samples,
    }
}

/// Averages `sample` over the configured number of draws.
pub fn mean<F>(settings: &McSettings, sample: F) -> MeanEstimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    let batches = settings.batches();
    // (count, mean, M2) per batch, merged in batch order.
    let parts = par::map_slice(settings.exec, &batches, |&(b, size)| {
        let mut rng = stream_rng(settings.seed, b);
        let (mut mu, mut m2) = (0.0, 0.0);
        for i in 0..size {
            let v = sample(&mut rng);
            let d = v - mu;
            mu += d / (i + 1) as f64;
            m2 += d * (v - mu);
        }
        (size as f64, mu, m2)
    });
    let (mut n, mut mu, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in parts {
        if nb == 0.0 {
            continue;
        }
        let tot = n + nb;
        let d = mb - mu;
        mu += d * nb / tot;
        m2 += m2b + d * d * n * nb / tot;
        n = tot;
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    MeanEstimate {
        mean: mu,
        std_error: (var / n.max(1.0)).sqrt(),
        samples: settings.samples,
    }
}
