//! Progressive focused attention for windowed vision transformers.
//!
//! Attention maps are inherited across layers of the same shift parity by a
//! Hadamard product, and each layer only computes query/key similarities
//! where the inherited map is still nonzero. The crate provides the dense
//! substrate, the row-sparse kernels, window partitioning, the four
//! attention variants, a layer cascade over synthetic feature maps, and the
//! closed-form cost model together with reconciliation against measured
//! multiply-accumulate counts.

pub mod attention;
pub mod cascade;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod sparse;
pub mod window;

pub use attention::{
    pfa_step, progressive_attention_step, topk_attention, vanilla_attention, AttentionInputs,
    AttentionResult, PfaStepResult,
};
pub use cascade::{
    build_custom, build_preset, k_for_layer, run_cascade, CascadeOptions, CascadeTrace, ChainState,
    FocusSchedule, LayerTrace, LayerWeights, ModelPreset, Parity, PresetName, RowCapture, Variant,
};
pub use error::{Error, Result};
pub use matrix::{
    dense_matmul, dense_scores, masked_softmax_rows, row_normalize, seeded_fill, DenseMatrix,
    FillDistribution,
};
pub use sparse::{
    hadamard_rownorm, sign_mask, smm_aggregate, smm_scores, topk_rows, IndexMask, RowSparseMatrix,
};
pub use window::{merge, parity_shift, partition, FeatureMap, Shift, WindowBatch};
