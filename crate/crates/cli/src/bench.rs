//! Wall-clock timing of the masked kernels against dense baselines.

use std::hint::black_box;
use std::time::Instant;

use pfa_core::matrix::{seeded_fill, FillDistribution};
use pfa_core::{dense_matmul, dense_scores, smm_aggregate, smm_scores, DenseMatrix, IndexMask};

use crate::error::{CliError, Result};
use crate::formats::BenchRow;

pub const MIN_WARMUP: usize = 5;
pub const MIN_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub tokens: Vec<usize>,
    pub head_dims: Vec<usize>,
    /// Density denominators: `16` keeps `N/16` keys per row.
    pub densities: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        Self {
            tokens: vec![256, 1024],
            head_dims: vec![32, 64],
            densities: vec![1, 4, 16, 64],
            warmup: MIN_WARMUP,
            iters: MIN_ITERS,
            seed: 0,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.warmup < MIN_WARMUP || self.iters < MIN_ITERS {
            return Err(CliError::Config(format!(
                "benchmarks need at least {MIN_WARMUP} warmup and {MIN_ITERS} measured iterations"
            )));
        }
        if let Some((&n, &den)) = self
            .tokens
            .iter()
            .flat_map(|n| self.densities.iter().map(move |d| (n, d)))
            .find(|(&n, &d)| d == 0 || n % d != 0)
        {
            return Err(CliError::Config(format!(
                "density 1/{den} does not divide N={n}"
            )));
        }
        Ok(())
    }
}

/// Median wall time of `f` in nanoseconds.
pub fn median_ns<T>(warmup: usize, iters: usize, mut f: impl FnMut() -> T) -> u128 {
    for _ in 0..warmup {
        black_box(f());
    }
    let mut samples: Vec<u128> = (0..iters.max(1))
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed().as_nanos()
        })
        .collect();
    samples.sort_unstable();
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2
    }
}

/// Operands for one `(N, d)` point.
pub struct Operands {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
}

impl Operands {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        let g = FillDistribution::Gaussian(1.0);
        Self {
            q: seeded_fill(n, d, seed, g),
            k: seeded_fill(n, d, seed ^ 1, g),
            v: seeded_fill(n, d, seed ^ 2, g),
        }
    }
}

/// Times `smm_scores` at one density against `dense_scores`; returns
/// `(sparse_ns, dense_ns, sparse_macs, dense_macs)`.
pub fn scores_pair(
    n: usize,
    d: usize,
    density_den: usize,
    warmup: usize,
    iters: usize,
    seed: u64,
) -> Result<(u128, u128, u64, u64)> {
    let ops = Operands::new(n, d, seed);
    let mask = IndexMask::random(n, n, n / density_den, seed);
    let (_, macs) = smm_scores(&ops.q, &ops.k, &mask)?;
    let sparse = median_ns(warmup, iters, || smm_scores(&ops.q, &ops.k, &mask));
    let dense = median_ns(warmup, iters, || dense_scores(&ops.q, &ops.k));
    Ok((sparse, dense, macs, (n * n * d) as u64))
}

pub fn run(plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &n in &plan.tokens {
        for &d in &plan.head_dims {
            let ops = Operands::new(n, d, plan.seed);
            let dense_macs = (n * n * d) as u64;
            let ns = median_ns(plan.warmup, plan.iters, || dense_scores(&ops.q, &ops.k));
            rows.push(BenchRow {
                variant: "dense_scores",
                n,
                d,
                density_den: 1,
                median_ns: ns,
                macs: dense_macs,
            });
            let full = seeded_fill(n, n, plan.seed ^ 3, FillDistribution::Uniform(1.0));
            let ns = median_ns(plan.warmup, plan.iters, || dense_matmul(&full, &ops.v));
            rows.push(BenchRow {
                variant: "dense_aggregate",
                n,
                d,
                density_den: 1,
                median_ns: ns,
                macs: dense_macs,
            });
            for &den in &plan.densities {
                let mask = IndexMask::random(n, n, n / den, plan.seed ^ (n * d * den) as u64);
                let (scores, macs) = smm_scores(&ops.q, &ops.k, &mask)?;
                let ns = median_ns(plan.warmup, plan.iters, || {
                    smm_scores(&ops.q, &ops.k, &mask)
                });
                rows.push(BenchRow {
                    variant: "smm_scores",
                    n,
                    d,
                    density_den: den,
                    median_ns: ns,
                    macs,
                });
                let (_, macs) = smm_aggregate(&scores, &ops.v, &mask)?;
                let ns = median_ns(plan.warmup, plan.iters, || {
                    smm_aggregate(&scores, &ops.v, &mask)
                });
                rows.push(BenchRow {
                    variant: "smm_aggregate",
                    n,
                    d,
                    density_den: den,
                    median_ns: ns,
                    macs,
                });
            }
        }
    }
    Ok(rows)
}
