//! Block-merged moments and exact order statistics.
//!
//! Moments are computed exactly (two passes) inside each block and blocks are
//! combined with the pairwise update of Chan, Golub and LeVeque. Merging in a
//! fixed block order makes the result independent of how blocks were
//! scheduled.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for Moments {
    fn default() -> Self {
        Moments {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl Moments {
    /// Exact two-pass moments of one block.
    pub fn from_slice(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Moments::default();
        }
        let n = xs.len();
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut sum = 0.0;
        for &x in xs {
            sum += x;
            min = min.min(x);
            max = max.max(x);
        }
        if min == max {
            return Moments {
                n: n as u64,
                mean: min,
                m2: 0.0,
                min,
                max,
            };
        }
        let mean = sum / n as f64;
        let (mut sq, mut lin) = (0.0, 0.0);
        for &x in xs {
            let d = x - mean;
            sq += d * d;
            lin += d;
        }
        // Corrected two-pass: removes the rounding error left in `mean`.
        let m2 = (sq - lin * lin / n as f64).max(0.0);
        Moments {
            n: n as u64,
            mean: mean + lin / n as f64,
            m2,
            min,
            max,
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * (nb / n);
        self.m2 += other.m2 + delta * delta * (na * nb / n);
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn merged<'a>(blocks: impl IntoIterator<Item = &'a Moments>) -> Moments {
        let mut acc = Moments::default();
        for b in blocks {
            acc.merge(b);
        }
        acc
    }

    /// Divide-by-n variance; exactly zero when every value was equal.
    pub fn population_variance(&self) -> f64 {
        if self.n == 0 || self.min == self.max {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn population_std(&self) -> f64 {
        self.population_variance().sqrt()
    }
}

/// Streams values into fixed-length blocks, closing each block with exact
/// two-pass moments.
#[derive(Debug, Clone)]
pub struct BlockMoments {
    block_len: usize,
    buf: Vec<f64>,
    acc: Moments,
}

impl BlockMoments {
    pub fn new(block_len: usize) -> Self {
        let block_len = block_len.max(1);
        BlockMoments {
            block_len,
            buf: Vec::with_capacity(block_len),
            acc: Moments::default(),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.buf.push(x);
        if self.buf.len() == self.block_len {
            self.flush();
        }
    }

    pub fn extend(&mut self, xs: impl IntoIterator<Item = f64>) {
        for x in xs {
            self.push(x);
        }
    }

    fn flush(&mut self) {
        if !self.buf.is_empty() {
            let block = Moments::from_slice(&self.buf);
            self.acc.merge(&block);
            self.buf.clear();
        }
    }

    pub fn finish(mut self) -> Moments {
        self.flush();
        self.acc
    }
}

/// Lower median: the element of rank `(n - 1) / 2` in ascending order.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// Nearest-rank percentile of `values` for `0 < p <= 100`: the smallest value
/// whose rank is at least `ceil(p / 100 * n)`.
pub fn nearest_rank<T: Ord + Copy>(values: &mut [T], p: f64) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable(idx);
    Some(*v)
}
