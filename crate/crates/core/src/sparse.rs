//! Row-sparse attention maps, index masks and the masked product kernel.
//!
//! Both structures are CSR-like: a row pointer array plus per-row column
//! lists kept strictly increasing. Attention maps never store explicit
//! zeros, so `nnz` is exactly the amount of work the kernels do.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};

/// Binary row-sparse structure marking which (query, key) pairs may be
/// computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl IndexMask {
    /// The all-ones mask.
    pub fn full(rows: usize, cols: usize) -> Self {
        let col_idx = (0..rows).flat_map(|_| 0..cols as u32).collect();
        let row_ptr = (0..=rows).map(|i| i * cols).collect();
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
        }
    }

    pub fn from_rows<I>(cols: usize, rows: Vec<I>) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let n_rows = rows.len();
        for (i, row) in rows.into_iter().enumerate() {
            let start = col_idx.len();
            for c in row {
                if c >= cols {
                    return Err(Error::InvalidStructure(format!(
                        "row {i}: column {c} out of range for width {cols}"
                    )));
                }
                if col_idx.len() > start && *col_idx.last().unwrap() as usize >= c {
                    return Err(Error::InvalidStructure(format!(
                        "row {i}: columns must be strictly increasing"
                    )));
                }
                col_idx.push(c as u32);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: n_rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    /// Seeded mask with exactly `per_row` distinct columns in every row
    /// (clamped to `cols`), drawn with ChaCha8.
    pub fn random(rows: usize, cols: usize, per_row: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per_row = per_row.min(cols);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(rows * per_row);
        for _ in 0..rows {
            let mut picked: Vec<u32> = sample(&mut rng, cols, per_row)
                .into_iter()
                .map(|c| c as u32)
                .collect();
            picked.sort_unstable();
            col_idx.extend(picked);
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
        }
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
    pub fn row(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    #[inline]
    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&(j as u32)).is_ok()
    }

    /// First row whose support differs from `m`'s, if any.
    pub fn first_support_mismatch(&self, m: &RowSparseMatrix) -> Option<usize> {
        if self.rows != m.rows() {
            return Some(0);
        }
        (0..self.rows).find(|&i| self.row(i) != m.row(i).0)
    }
}

/// Row-sparse matrix with per-row sorted `(column, value)` entries.
///
/// Score matrices may hold any finite value. Attention maps additionally
/// keep every stored weight strictly positive; see
/// [`RowSparseMatrix::check_attention`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

pub(crate) struct RowSparseBuilder {
    inner: RowSparseMatrix,
}

impl RowSparseBuilder {
    /// Appends a row verbatim. `cols` must already be sorted.
    pub(crate) fn push_row(&mut self, cols: &[u32], vals: &[f64]) {
        debug_assert_eq!(cols.len(), vals.len());
        self.inner.col_idx.extend_from_slice(cols);
        self.inner.values.extend_from_slice(vals);
        self.inner.row_ptr.push(self.inner.col_idx.len());
    }

    pub(crate) fn finish(self) -> RowSparseMatrix {
        debug_assert_eq!(self.inner.row_ptr.len(), self.inner.rows + 1);
        self.inner
    }
}

impl RowSparseMatrix {
    pub(crate) fn builder(rows: usize, cols: usize) -> RowSparseBuilder {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        row_ptr.push(0);
        RowSparseBuilder {
            inner: Self {
                rows,
                cols,
                row_ptr,
                col_idx: Vec::new(),
                values: Vec::new(),
            },
        }
    }

    /// Full-support matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mask = IndexMask::full(rows, cols);
        Self {
            rows,
            cols,
            row_ptr: mask.row_ptr,
            col_idx: mask.col_idx,
            values: vec![value; rows * cols],
        }
    }

    /// The all-ones map used to seed a chain.
    pub fn ones(n: usize) -> Self {
        Self::filled(n, n, 1.0)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut builder = Self::builder(rows.len(), cols);
        let mut c_buf = Vec::new();
        let mut v_buf = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            c_buf.clear();
            v_buf.clear();
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::InvalidStructure(format!(
                        "row {i}: column {c} out of range for width {cols}"
                    )));
                }
                if c_buf.last().is_some_and(|&last: &u32| last as usize >= c) {
                    return Err(Error::InvalidStructure(format!(
                        "row {i}: columns must be strictly increasing"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite { index: c, value: v });
                }
                c_buf.push(c as u32);
                v_buf.push(v);
            }
            builder.push_row(&c_buf, &v_buf);
        }
        Ok(builder.finish())
    }

    /// Keeps the positive entries of a dense matrix.
    pub fn from_dense_positive(m: &DenseMatrix) -> Self {
        let mut builder = Self::builder(m.rows(), m.cols());
        let mut c_buf = Vec::new();
        let mut v_buf = Vec::new();
        for i in 0..m.rows() {
            c_buf.clear();
            v_buf.clear();
            for (j, &v) in m.row(i).iter().enumerate() {
                if v > 0.0 {
                    c_buf.push(j as u32);
                    v_buf.push(v);
                }
            }
            builder.push_row(&c_buf, &v_buf);
        }
        builder.finish()
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
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    #[inline]
    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    /// Stored value at (i, j), if present.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).ok().map(|p| vals[p])
    }

    /// Mutable access to every stored value, in row-major storage order.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Rescales row `i` to sum to one in place.
    pub(crate) fn normalize_row(&mut self, i: usize) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        let sum: f64 = self.values[r.clone()].iter().sum();
        for v in &mut self.values[r] {
            *v /= sum;
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let row = out.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c as usize] = v;
            }
        }
        out
    }

    /// Support as a mask, without validating weights.
    pub fn support(&self) -> IndexMask {
        IndexMask {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
        }
    }

    /// Checks the attention-map invariants: every row non-empty, every
    /// weight strictly positive and finite.
    pub fn check_attention(&self) -> Result<()> {
        for i in 0..self.rows {
            let (_, vals) = self.row(i);
            if vals.is_empty() {
                return Err(Error::EmptyRow {
                    op: "check_attention",
                    row: i,
                });
            }
            if let Some(&v) = vals.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidStructure(format!(
                    "row {i}: attention weight {v} is not strictly positive"
                )));
            }
        }
        Ok(())
    }
}

/// Masked score kernel: computes `q_i · k_j` only where `mask(i, j)` is
/// set. Returns the unscaled scores and the number of multiply-accumulates
/// performed.
pub fn smm_scores(
    q: &DenseMatrix,
    k: &DenseMatrix,
    mask: &IndexMask,
) -> Result<(RowSparseMatrix, u64)> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "smm_scores",
            left_rows: q.rows(),
            left_cols: q.cols(),
            right_rows: k.rows(),
            right_cols: k.cols(),
        });
    }
    if mask.rows() != q.rows() || mask.cols() != k.rows() {
        return Err(Error::ShapeMismatch {
            op: "smm_scores (mask)",
            left_rows: q.rows(),
            left_cols: k.rows(),
            right_rows: mask.rows(),
            right_cols: mask.cols(),
        });
    }
    let d = q.cols() as u64;
    let mut macs = 0u64;
    let mut values = Vec::with_capacity(mask.nnz());
    for i in 0..q.rows() {
        let q_row = q.row(i);
        for &j in mask.row(i) {
            values.push(dot(q_row, k.row(j as usize)));
            macs += d;
        }
    }
    let out = RowSparseMatrix {
        rows: mask.rows,
        cols: mask.cols,
        row_ptr: mask.row_ptr.clone(),
        col_idx: mask.col_idx.clone(),
        values,
    };
    Ok((out, macs))
}

/// Masked aggregation: row `i` of the output is `Σ_j a(i, j) · v_j` over the
/// support of row `i`. The mask must describe `a`'s support exactly.
pub fn smm_aggregate(
    a: &RowSparseMatrix,
    v: &DenseMatrix,
    mask: &IndexMask,
) -> Result<(DenseMatrix, u64)> {
    if a.cols() != v.rows() {
        return Err(Error::ShapeMismatch {
            op: "smm_aggregate",
            left_rows: a.rows(),
            left_cols: a.cols(),
            right_rows: v.rows(),
            right_cols: v.cols(),
        });
    }
    if let Some(row) = mask.first_support_mismatch(a) {
        return Err(Error::SupportMismatch {
            op: "smm_aggregate",
            row,
        });
    }
    let d = v.cols();
    let mut macs = 0u64;
    let mut out = DenseMatrix::zeros(a.rows(), d);
    for i in 0..a.rows() {
        let (cols, weights) = a.row(i);
        let out_row = out.row_mut(i);
        for (&j, &w) in cols.iter().zip(weights) {
            for (o, &x) in out_row.iter_mut().zip(v.row(j as usize)) {
                *o += w * x;
            }
            macs += d as u64;
        }
    }
    Ok((out, macs))
}

/// Ordering for top-k selection: larger weight first, then lower column.
#[inline]
fn rank(a: (u32, f64), b: (u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Positions (into `vals`) of the `k` best entries, ascending by position.
pub(crate) fn top_k_positions(cols: &[u32], vals: &[f64], k: usize) -> Vec<usize> {
    let n = vals.len();
    if k >= n {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.select_nth_unstable_by(k - 1, |&x, &y| rank((cols[x], vals[x]), (cols[y], vals[y])));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Keeps the `min(k, nnz)` largest entries of every row (ties go to the
/// lower column). Weights are not renormalised.
pub fn topk_rows(m: &RowSparseMatrix, k: usize) -> Result<RowSparseMatrix> {
    if k == 0 {
        return Err(Error::InvalidParameter("top-k requires k >= 1".into()));
    }
    let mut builder = RowSparseMatrix::builder(m.rows(), m.cols());
    let mut c_buf = Vec::new();
    let mut v_buf = Vec::new();
    for i in 0..m.rows() {
        let (cols, vals) = m.row(i);
        if k >= cols.len() {
            builder.push_row(cols, vals);
            continue;
        }
        c_buf.clear();
        v_buf.clear();
        for p in top_k_positions(cols, vals, k) {
            c_buf.push(cols[p]);
            v_buf.push(vals[p]);
        }
        builder.push_row(&c_buf, &v_buf);
    }
    Ok(builder.finish())
}

/// Binary mask of the positive entries; every row must keep at least one.
pub fn sign_mask(m: &RowSparseMatrix) -> Result<IndexMask> {
    for i in 0..m.rows() {
        let (_, vals) = m.row(i);
        if vals.is_empty() {
            return Err(Error::EmptyRow {
                op: "sign_mask",
                row: i,
            });
        }
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidStructure(format!(
                "sign_mask: row {i} stores a non-positive weight"
            )));
        }
    }
    Ok(m.support())
}

/// Elementwise product of `current` with `previous` on `current`'s support,
/// then row normalisation.
///
/// `current`'s support must sit inside `previous`'s, row by row. Output
/// support equals `current`'s; normalised products that underflow are held
/// at the smallest normal value.
pub fn hadamard_rownorm(
    current: &RowSparseMatrix,
    previous: &RowSparseMatrix,
) -> Result<RowSparseMatrix> {
    if current.rows() != previous.rows() || current.cols() != previous.cols() {
        return Err(Error::ShapeMismatch {
            op: "hadamard_rownorm",
            left_rows: current.rows(),
            left_cols: current.cols(),
            right_rows: previous.rows(),
            right_cols: previous.cols(),
        });
    }
    let mut builder = RowSparseMatrix::builder(current.rows(), current.cols());
    let mut prod = Vec::new();
    for i in 0..current.rows() {
        let (c_cols, c_vals) = current.row(i);
        let (p_cols, p_vals) = previous.row(i);
        prod.clear();
        let mut p = 0;
        for (&col, &cv) in c_cols.iter().zip(c_vals) {
            while p < p_cols.len() && p_cols[p] < col {
                p += 1;
            }
            if p == p_cols.len() || p_cols[p] != col {
                return Err(Error::SupportViolation {
                    op: "hadamard_rownorm",
                    row: i,
                    col: col as usize,
                });
            }
            prod.push(cv * p_vals[p]);
        }
        let sum: f64 = prod.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::NonPositiveRowSum {
                op: "hadamard_rownorm",
                row: i,
                sum,
            });
        }
        for x in prod.iter_mut() {
            *x = (*x / sum).max(f64::MIN_POSITIVE);
        }
        builder.push_row(c_cols, &prod);
    }
    Ok(builder.finish())
}
