//! The four window attention computations: dense softmax attention, top-k
//! sparse attention, progressive attention (inherits the previous map by a
//! Hadamard product) and progressive focused attention (the same, with the
//! score computation gated by the previous map's support and the result
//! truncated to a per-row budget).

use crate::error::{Error, Result};
use crate::matrix::{
    dense_matmul, dense_scores, masked_softmax_rows, sparse_softmax_rows, DenseMatrix,
};
use crate::sparse::{
    hadamard_rownorm, sign_mask, smm_aggregate, smm_scores, top_k_positions, topk_rows, IndexMask,
    RowSparseMatrix,
};

/// Per-head query, key and value matrices for one window, each `N × d`.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
}

impl AttentionInputs {
    pub fn new(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        let shape = (q.rows(), q.cols());
        for (name, m) in [("k", &k), ("v", &v)] {
            if (m.rows(), m.cols()) != shape {
                return Err(Error::InvalidParameter(format!(
                    "{name} is {}x{}, q is {}x{}",
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        if shape.1 == 0 || shape.0 == 0 {
            return Err(Error::InvalidParameter(
                "attention inputs must be non-empty".into(),
            ));
        }
        Ok(Self { q, k, v })
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn k(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    /// Number of tokens `N`.
    pub fn tokens(&self) -> usize {
        self.q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    /// The softmax temperature `1/√d`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

/// Attention map, aggregated output and the multiply-accumulates spent on
/// scores and on aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub attention: RowSparseMatrix,
    pub output: DenseMatrix,
    pub macs_scores: u64,
    pub macs_aggregate: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfaStepResult {
    /// Attention map `A^l` after focusing.
    pub attention: RowSparseMatrix,
    /// Index mask `I^l`, the support of `attention`.
    pub mask: IndexMask,
    pub output: DenseMatrix,
    pub macs_scores: u64,
    pub macs_aggregate: u64,
}

fn dense_cost(n: usize, d: usize) -> u64 {
    (n * n * d) as u64
}

/// Dense softmax attention over every token pair; output aggregates `v`.
pub fn vanilla_attention(inputs: &AttentionInputs) -> Result<AttentionResult> {
    let n = inputs.tokens();
    let d = inputs.head_dim();
    let scores = dense_scores(&inputs.q, &inputs.k)?;
    let attention = masked_softmax_rows(&scores, &IndexMask::full(n, n), inputs.scale())?;
    let output = dense_matmul(&attention.to_dense(), &inputs.v)?;
    Ok(AttentionResult {
        attention,
        output,
        macs_scores: dense_cost(n, d),
        macs_aggregate: dense_cost(n, d),
    })
}

/// Keeps the `k` largest scaled scores per row and takes the softmax over
/// those positions only.
pub fn topk_attention(inputs: &AttentionInputs, k: usize) -> Result<AttentionResult> {
    let n = inputs.tokens();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "top-k attention needs 1 <= k <= {n}, got {k}"
        )));
    }
    let scores = dense_scores(&inputs.q, &inputs.k)?;
    let all: Vec<u32> = (0..n as u32).collect();
    let rows = (0..n)
        .map(|i| top_k_positions(&all, scores.row(i), k))
        .collect();
    let keep = IndexMask::from_rows(n, rows)?;
    let attention = masked_softmax_rows(&scores, &keep, inputs.scale())?;
    let support = sign_mask(&attention)?;
    let (output, macs_aggregate) = smm_aggregate(&attention, &inputs.v, &support)?;
    Ok(AttentionResult {
        attention,
        output,
        macs_scores: dense_cost(n, inputs.head_dim()),
        macs_aggregate,
    })
}

/// Dense attention multiplied into `previous` on its support, then row
/// normalised. `previous` may be any strictly positive map (the all-ones
/// map is the neutral starting point).
pub fn progressive_attention_step(
    inputs: &AttentionInputs,
    previous: &RowSparseMatrix,
) -> Result<AttentionResult> {
    let n = inputs.tokens();
    if previous.rows() != n || previous.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "progressive_attention_step",
            left_rows: n,
            left_cols: n,
            right_rows: previous.rows(),
            right_cols: previous.cols(),
        });
    }
    previous.check_attention()?;
    let full = vanilla_attention(inputs)?;
    let dense = full.attention.to_dense();
    let calculated = RowSparseMatrix::from_rows(
        n,
        (0..n)
            .map(|i| {
                previous
                    .row(i)
                    .0
                    .iter()
                    .map(|&c| (c as usize, dense.get(i, c as usize)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect()
            })
            .collect(),
    )?;
    let attention = hadamard_rownorm(&calculated, previous)?;
    let support = sign_mask(&attention)?;
    let (output, macs_aggregate) = smm_aggregate(&attention, &inputs.v, &support)?;
    Ok(AttentionResult {
        attention,
        output,
        macs_scores: full.macs_scores,
        macs_aggregate,
    })
}

/// One progressive focused attention layer.
///
/// Scores are computed only where `previous_mask` is set, softmaxed with
/// scale `1/√d`, multiplied into `previous` and row normalised, then each
/// row keeps its `k_l` largest weights. The kept weights are used as-is
/// unless `renormalize_after_topk` is set, in which case rows that lost
/// entries are rescaled to sum to one.
pub fn pfa_step(
    inputs: &AttentionInputs,
    previous: &RowSparseMatrix,
    previous_mask: &IndexMask,
    k_l: usize,
    renormalize_after_topk: bool,
) -> Result<PfaStepResult> {
    if k_l == 0 {
        return Err(Error::InvalidParameter("focus budget must be >= 1".into()));
    }
    if let Some(row) = previous_mask.first_support_mismatch(previous) {
        return Err(Error::SupportMismatch {
            op: "pfa_step",
            row,
        });
    }
    let (scores, macs_scores) = smm_scores(&inputs.q, &inputs.k, previous_mask)?;
    let calculated = sparse_softmax_rows(&scores, inputs.scale())?;
    let combined = hadamard_rownorm(&calculated, previous)?;
    let mut attention = topk_rows(&combined, k_l)?;
    if renormalize_after_topk {
        for i in 0..attention.rows() {
            if attention.row_nnz(i) < combined.row_nnz(i) {
                attention.normalize_row(i);
            }
        }
    }
    let mask = sign_mask(&attention)?;
    let (output, macs_aggregate) = smm_aggregate(&attention, &inputs.v, &mask)?;
    Ok(PfaStepResult {
        attention,
        mask,
        output,
        macs_scores,
        macs_aggregate,
    })
}
