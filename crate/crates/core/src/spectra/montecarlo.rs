//! Streaming Monte-Carlo second moments of random features `a(w) ∈ Rⁿ`,
//! `w ~ N(0, I_d)`.
//!
//! The sample budget is cut into fixed chunks; chunk `c` draws from a
//! generator seeded with `mix(seed, c)`. Chunks run in parallel and are
//! merged in index order with Chan's pooled update, so the estimate depends
//! only on `(seed, samples)` and never on the number of threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::seeding::{mix, rng_from_seed};
use crate::tensorlin::{dot, Matrix};

pub(crate) const CHUNK: usize = 8192;

/// Per-entry running mean and sum of squared deviations over the upper triangle.
#[derive(Clone)]
struct Moments {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(entries: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; entries],
            m2: vec![0.0; entries],
        }
    }

    fn push_outer(&mut self, a: &[f64]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        let n = a.len();
        let mut t = 0;
        for i in 0..n {
            let ai = a[i];
            for &aj in &a[i..n] {
                let x = ai * aj;
                let delta = x - self.mean[t];
                self.mean[t] += delta * inv;
                self.m2[t] += delta * (x - self.mean[t]);
                t += 1;
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for t in 0..self.mean.len() {
            let delta = other.mean[t] - self.mean[t];
            self.mean[t] += delta * nb / total;
            self.m2[t] += other.m2[t] + delta * delta * na * nb / total;
        }
        self.count += other.count;
    }
}

/// Entrywise mean of `a aᵀ` and the standard error of each entry.
pub(crate) struct OuterMoments {
    pub mean: Matrix,
    pub sem: Matrix,
}

pub(crate) fn outer_moments<F>(x: &Matrix, samples: usize, seed: u64, feature: F) -> OuterMoments
where
    F: Fn(f64) -> f64 + Sync,
{
    let (n, d) = x.shape();
    let entries = n * (n + 1) / 2;
    let chunks = samples.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(samples - c * CHUNK);
            let mut rng = rng_from_seed(mix(&[seed, c as u64]));
            let mut acc = Moments::new(entries);
            let mut w = vec![0.0; d];
            let mut a = vec![0.0; n];
            for _ in 0..count {
                w.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                for (ai, xi) in a.iter_mut().zip(x.row_iter()) {
                    *ai = feature(dot(xi, &w));
                }
                acc.push_outer(&a);
            }
            acc
        })
        .collect();
    let mut total = Moments::new(entries);
    for p in &partials {
        total.merge(p);
    }
    let denom = (total.count as f64) * ((total.count - 1) as f64);
    let mut mean = Matrix::zeros(n, n);
    let mut sem = Matrix::zeros(n, n);
    let mut t = 0;
    for i in 0..n {
        for j in i..n {
            let m = total.mean[t];
            let s = (total.m2[t].max(0.0) / denom).sqrt();
            mean[(i, j)] = m;
            mean[(j, i)] = m;
            sem[(i, j)] = s;
            sem[(j, i)] = s;
            t += 1;
        }
    }
    OuterMoments { mean, sem }
}
