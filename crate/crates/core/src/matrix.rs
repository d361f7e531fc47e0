//! Dense row-major matrices and the handful of kernels the attention code
//! needs: matmul, transpose, masked row softmax and seeded random fills.
//!
//! Everything here runs in `f64`. Every reduction walks its inner index in
//! ascending order with a single accumulator, so a given entry is computed
//! the same way no matter how callers split work across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sparse::{IndexMask, RowSparseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidStructure(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidStructure("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.values[row * cols..(row + 1) * cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn column_slice(&self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols, "column slice out of range");
        let mut values = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            values.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            values,
        }
    }

    /// Largest absolute entrywise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dot product with a single accumulator in ascending index order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Standard matrix product. Loops run i-p-j so the right operand streams by
/// row, while each output entry still accumulates over ascending `p`.
pub fn dense_matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "dense_matmul",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b.values[p * b.cols..(p + 1) * b.cols];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    Ok(out)
}

/// All-pairs row dot products `q · kᵀ` without materialising the transpose.
/// This is the dense baseline the sparse score kernel is measured against.
pub fn dense_scores(q: &DenseMatrix, k: &DenseMatrix) -> Result<DenseMatrix> {
    if q.cols != k.cols {
        return Err(Error::ShapeMismatch {
            op: "dense_scores",
            left_rows: q.rows,
            left_cols: q.cols,
            right_rows: k.rows,
            right_cols: k.cols,
        });
    }
    let mut out = DenseMatrix::zeros(q.rows, k.rows);
    for i in 0..q.rows {
        let q_row = q.row(i);
        let out_row = &mut out.values[i * k.rows..(i + 1) * k.rows];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = dot(q_row, k.row(j));
        }
    }
    Ok(out)
}

/// Softmax of `scale * values` over one row's support, max-subtracted.
/// Every weight is positive in exact arithmetic, so results that underflow
/// are held at the smallest normal value to keep the support structural.
pub(crate) fn softmax_in_place(values: &mut [f64], scale: f64) {
    let max = values
        .iter()
        .map(|v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v * scale - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v = (*v / sum).max(f64::MIN_POSITIVE);
    }
}

/// Row softmax restricted to the positions `mask` sets. Dropped positions
/// are left out of both the output and the denominator.
pub fn masked_softmax_rows(
    scores: &DenseMatrix,
    mask: &IndexMask,
    scale: f64,
) -> Result<RowSparseMatrix> {
    if mask.rows() != scores.rows || mask.cols() != scores.cols {
        return Err(Error::ShapeMismatch {
            op: "masked_softmax_rows",
            left_rows: scores.rows,
            left_cols: scores.cols,
            right_rows: mask.rows(),
            right_cols: mask.cols(),
        });
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "softmax scale must be positive, got {scale}"
        )));
    }
    let mut builder = RowSparseMatrix::builder(scores.rows, scores.cols);
    let mut buf = Vec::new();
    for i in 0..scores.rows {
        let cols = mask.row(i);
        if cols.is_empty() {
            return Err(Error::EmptyRow {
                op: "masked_softmax_rows",
                row: i,
            });
        }
        let row = scores.row(i);
        buf.clear();
        buf.extend(cols.iter().map(|&c| row[c as usize]));
        softmax_in_place(&mut buf, scale);
        builder.push_row(cols, &buf);
    }
    Ok(builder.finish())
}

/// Row softmax over the stored entries of a sparse score matrix.
pub fn sparse_softmax_rows(scores: &RowSparseMatrix, scale: f64) -> Result<RowSparseMatrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "softmax scale must be positive, got {scale}"
        )));
    }
    let mut builder = RowSparseMatrix::builder(scores.rows(), scores.cols());
    let mut buf = Vec::new();
    for i in 0..scores.rows() {
        let (cols, vals) = scores.row(i);
        if cols.is_empty() {
            return Err(Error::EmptyRow {
                op: "sparse_softmax_rows",
                row: i,
            });
        }
        buf.clear();
        buf.extend_from_slice(vals);
        softmax_in_place(&mut buf, scale);
        builder.push_row(cols, &buf);
    }
    Ok(builder.finish())
}

/// Divides every entry by its row sum.
pub fn row_normalize(m: &RowSparseMatrix) -> Result<RowSparseMatrix> {
    let mut builder = RowSparseMatrix::builder(m.rows(), m.cols());
    let mut buf = Vec::new();
    for i in 0..m.rows() {
        let (cols, vals) = m.row(i);
        if cols.is_empty() {
            return Err(Error::EmptyRow {
                op: "row_normalize",
                row: i,
            });
        }
        let sum: f64 = vals.iter().sum();
        if !(sum > 0.0) || vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::NonPositiveRowSum {
                op: "row_normalize",
                row: i,
                sum,
            });
        }
        buf.clear();
        buf.extend(vals.iter().map(|v| (v / sum).max(f64::MIN_POSITIVE)));
        builder.push_row(cols, &buf);
    }
    Ok(builder.finish())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillDistribution {
    /// Uniform on `[-s, s]`.
    Uniform(f64),
    /// Normal with mean 0 and standard deviation `s`.
    Gaussian(f64),
}

/// Deterministic pseudo-random matrix.
///
/// The generator is ChaCha8 seeded with `seed` through
/// `SeedableRng::seed_from_u64`; values are drawn in row-major order.
/// Uniform values come from `Rng::random_range` on the closed interval and
/// Gaussian values from `rand_distr::Normal`. Both crates are pinned so the
/// streams stay stable.
pub fn seeded_fill(rows: usize, cols: usize, seed: u64, dist: FillDistribution) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rows * cols;
    let values: Vec<f64> = match dist {
        FillDistribution::Uniform(s) => {
            let s = s.abs();
            (0..n).map(|_| rng.random_range(-s..=s)).collect()
        }
        FillDistribution::Gaussian(s) => {
            let normal = Normal::new(0.0, s.abs()).expect("finite standard deviation");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    DenseMatrix { rows, cols, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_loop(a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out[i * b.cols() + j] = s;
            }
        }
        out
    }

    #[test]
    fn identity_is_neutral() {
        let m = seeded_fill(4, 3, 7, FillDistribution::Uniform(1.0));
        let out = dense_matmul(&DenseMatrix::identity(4), &m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn scalar_product() {
        let a = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(dense_matmul(&a, &b).unwrap().values(), &[6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        let err = dense_matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn random_eight_by_eight_matches_triple_loop() {
        let a = seeded_fill(8, 8, 1, FillDistribution::Gaussian(1.0));
        let b = seeded_fill(8, 8, 2, FillDistribution::Gaussian(1.0));
        let got = dense_matmul(&a, &b).unwrap();
        let want = triple_loop(&a, &b);
        let diff = got
            .values()
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12);
    }

    #[test]
    fn matmul_matches_triple_loop_across_shapes_and_seeds() {
        for seed in 0..100u64 {
            let m = 1 + (seed as usize * 7) % 16;
            let k = 1 + (seed as usize * 11) % 16;
            let n = 1 + (seed as usize * 13) % 16;
            let a = seeded_fill(m, k, seed, FillDistribution::Uniform(2.0));
            let b = seeded_fill(k, n, seed + 1000, FillDistribution::Uniform(2.0));
            let got = dense_matmul(&a, &b).unwrap();
            let want = triple_loop(&a, &b);
            for (x, y) in got.values().iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dense_scores_equals_matmul_with_transpose() {
        let q = seeded_fill(9, 5, 3, FillDistribution::Gaussian(1.0));
        let k = seeded_fill(7, 5, 4, FillDistribution::Gaussian(1.0));
        let a = dense_scores(&q, &k).unwrap();
        let b = dense_matmul(&q, &k.transpose()).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn softmax_uniform_row() {
        let s = DenseMatrix::zeros(1, 4);
        let out = masked_softmax_rows(&s, &IndexMask::full(1, 4), 1.0).unwrap();
        for w in out.row(0).1 {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_row() {
        let s = DenseMatrix::from_rows(&[vec![2f64.ln(), 0.0]]).unwrap();
        let out = masked_softmax_rows(&s, &IndexMask::full(1, 2), 1.0).unwrap();
        let w = out.row(0).1;
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_single_support() {
        let s = DenseMatrix::from_rows(&[vec![5.0, 100.0]]).unwrap();
        let mask = IndexMask::from_rows(2, vec![vec![0]]).unwrap();
        let out = masked_softmax_rows(&s, &mask, 1.0).unwrap();
        assert_eq!(out.row(0), (&[0u32][..], &[1.0][..]));
    }

    #[test]
    fn softmax_rejects_empty_mask_row() {
        let s = DenseMatrix::zeros(2, 2);
        let mask = IndexMask::from_rows(2, vec![vec![0], vec![]]).unwrap();
        let err = masked_softmax_rows(&s, &mask, 1.0).unwrap_err();
        assert_eq!(
            err,
            Error::EmptyRow {
                op: "masked_softmax_rows",
                row: 1
            }
        );
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let s = seeded_fill(6, 10, 9, FillDistribution::Gaussian(3.0));
        let mut shifted = s.clone();
        for i in 0..6 {
            let c = i as f64 * 17.5 - 40.0;
            for v in shifted.row_mut(i) {
                *v += c;
            }
        }
        let mask = IndexMask::full(6, 10);
        let a = masked_softmax_rows(&s, &mask, 1.0).unwrap().to_dense();
        let b = masked_softmax_rows(&shifted, &mask, 1.0)
            .unwrap()
            .to_dense();
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn full_mask_matches_plain_softmax() {
        let s = seeded_fill(5, 8, 11, FillDistribution::Gaussian(2.0));
        let out = masked_softmax_rows(&s, &IndexMask::full(5, 8), 0.5)
            .unwrap()
            .to_dense();
        for i in 0..5 {
            let exps: Vec<f64> = s.row(i).iter().map(|v| (v * 0.5).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..8 {
                assert!((out.get(i, j) - exps[j] / sum).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn row_normalize_examples() {
        let m = RowSparseMatrix::from_rows(
            2,
            vec![vec![(0, 0.4), (1, 0.3)], vec![(0, 0.125), (1, 0.125)]],
        )
        .unwrap();
        let n = row_normalize(&m).unwrap();
        let r0 = n.row(0).1;
        assert!((r0[0] - 4.0 / 7.0).abs() < 1e-15 && (r0[1] - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(n.row(1).1, &[0.5, 0.5]);
        let again = row_normalize(&n).unwrap();
        assert!(again.to_dense().max_abs_diff(&n.to_dense()) <= 1e-12);
    }

    #[test]
    fn row_normalize_rejects_empty_row() {
        let m = RowSparseMatrix::from_rows(2, vec![vec![(0, 1.0)], vec![]]).unwrap();
        assert!(matches!(
            row_normalize(&m),
            Err(Error::EmptyRow { row: 1, .. })
        ));
    }

    #[test]
    fn seeded_fill_contracts() {
        let a = seeded_fill(16, 8, 42, FillDistribution::Gaussian(1.0));
        let b = seeded_fill(16, 8, 42, FillDistribution::Gaussian(1.0));
        let c = seeded_fill(16, 8, 43, FillDistribution::Gaussian(1.0));
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        let u = seeded_fill(1024, 64, 5, FillDistribution::Uniform(1.0));
        assert!(u.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(matches!(
            DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }
}
