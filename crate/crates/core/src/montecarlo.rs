//! Deterministic parallel Monte Carlo reduction.
//!
//! Paths are grouped into fixed blocks of [`BLOCK`] consecutive indices. Each
//! block is reduced sequentially, blocks run on the worker pool, and the block
//! results are merged in index order. The result is therefore bit-identical
//! for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const BLOCK: u64 = 512;

/// Runs `per_path(acc, i)` for `i in 0..n_paths` and merges the partial
/// accumulators in block order.
pub fn run<A, I, F, M>(n_paths: u64, threads: Option<usize>, init: I, per_path: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
    M: Fn(&mut A, A),
{
    let blocks = n_paths.div_ceil(BLOCK);
    let work = || -> Vec<A> {
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = init();
                let end = ((b + 1) * BLOCK).min(n_paths);
                for i in b * BLOCK..end {
                    per_path(&mut acc, i);
                }
                acc
            })
            .collect()
    };
    let parts = match threads {
        Some(k) if k > 0 => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        },
        _ => work(),
    };
    let mut out = init();
    for p in parts {
        merge(&mut out, p);
    }
    out
}

/// Frequency of an event, with the first path (and time) where it occurred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: u64,
    pub hits: u64,
    pub first_hit: Option<(u64, usize)>,
}

impl Tally {
    pub fn record(&mut self, path: u64, hit_time: Option<usize>) {
        self.n += 1;
        if let Some(t) = hit_time {
            self.hits += 1;
            if self.first_hit.is_none_or(|(p, _)| path < p) {
                self.first_hit = Some((path, t));
            }
        }
    }

    pub fn merge(&mut self, other: Tally) {
        self.n += other.n;
        self.hits += other.hits;
        self.first_hit = match (self.first_hit, other.first_hit) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
    }

    pub fn frequency(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }
}

/// Running mean and variance of a real statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub max: Option<(f64, u64)>,
}

impl Moments {
    pub fn record(&mut self, path: u64, value: f64) {
        self.n += 1;
        self.sum += value;
        self.sum_sq += value * value;
        if self.max.is_none_or(|(m, _)| value > m) {
            self.max = Some((value, path));
        }
    }

    pub fn merge(&mut self, other: Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.max = match (self.max, other.max) {
            (Some(a), Some(b)) => Some(if b.0 > a.0 { b } else { a }),
            (a, b) => a.or(b),
        };
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// `sqrt(alpha (1 - alpha) / n)`.
pub fn binomial_se(alpha: f64, n: u64) -> f64 {
    (alpha * (1.0 - alpha) / n as f64).sqrt()
}
