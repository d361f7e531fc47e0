//! Fixtures shared by the benchmarks.

use pfa_core::{seeded_fill, DenseMatrix, FillDistribution, IndexMask, RowSparseMatrix};

/// Query, key and value blocks for one window and head.
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

/// Mask keeping `n / density_den` random keys per row.
pub fn mask(n: usize, density_den: usize, seed: u64) -> IndexMask {
    IndexMask::random(n, n, (n / density_den).max(1), seed)
}

/// Positive weights on the support of `mask`.
pub fn weights_on(mask: &IndexMask, seed: u64) -> RowSparseMatrix {
    let dense = seeded_fill(
        mask.rows(),
        mask.cols(),
        seed,
        FillDistribution::Uniform(1.0),
    );
    let rows = (0..mask.rows())
        .map(|i| {
            mask.row(i)
                .iter()
                .map(|&j| (j as usize, dense.get(i, j as usize).abs() + 1e-3))
                .collect()
        })
        .collect();
    RowSparseMatrix::from_rows(mask.cols(), rows).expect("mask columns are in range")
}
