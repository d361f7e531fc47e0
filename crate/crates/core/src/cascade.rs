//! Stacks attention layers into blocks, threads the two parity chains of
//! inherited attention maps through the network, and records a trace of
//! per-layer support sizes, row sums, entropies and work counters.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;

use crate::attention::{
    pfa_step, progressive_attention_step, topk_attention, vanilla_attention, AttentionInputs,
};
use crate::error::{Error, Result};
use crate::matrix::{dense_matmul, seeded_fill, DenseMatrix, FillDistribution};
use crate::metrics::row_entropy;
use crate::sparse::{IndexMask, RowSparseMatrix};
use crate::window::{merge, parity_shift, partition, FeatureMap, Shift};

/// How the per-row retention budget `K` evolves with depth.
#[derive(Debug, Clone, PartialEq)]
pub enum FocusSchedule {
    /// One budget per block.
    PerBlock(Vec<usize>),
    /// `K^1 = N`, `K^l = round(N · α^(l-1))`, never below 1.
    Geometric { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPreset {
    pub name: String,
    /// Attention layers per block.
    pub blocks: Vec<usize>,
    pub heads: usize,
    pub channels: usize,
    pub window: usize,
    pub focus: FocusSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Pft,
    PftLight,
    /// Small PFT-light-shaped model (16×16 windows) for desk-scale runs.
    Desk,
}

impl ModelPreset {
    pub fn pft() -> Self {
        Self {
            name: "pft".into(),
            blocks: vec![4, 4, 4, 6, 6, 6],
            heads: 6,
            channels: 240,
            window: 32,
            focus: FocusSchedule::PerBlock(vec![1024, 256, 128, 64, 32, 16]),
        }
    }

    pub fn pft_light() -> Self {
        Self {
            name: "pft_light".into(),
            blocks: vec![2, 4, 6, 6, 6],
            heads: 4,
            channels: 52,
            window: 32,
            focus: FocusSchedule::PerBlock(vec![1024, 256, 128, 64, 32]),
        }
    }

    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            blocks: vec![2, 4, 6, 6, 6],
            heads: 4,
            channels: 52,
            window: 16,
            focus: FocusSchedule::PerBlock(vec![256, 64, 32, 16, 8]),
        }
    }

    /// Validated custom configuration.
    pub fn custom(
        name: impl Into<String>,
        blocks: Vec<usize>,
        heads: usize,
        channels: usize,
        window: usize,
        focus: FocusSchedule,
    ) -> Result<Self> {
        let preset = Self {
            name: name.into(),
            blocks,
            heads,
            channels,
            window,
            focus,
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPreset(msg));
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return bad("every block needs at least one layer".into());
        }
        if self.heads == 0 || self.channels == 0 {
            return bad("heads and channels must be positive".into());
        }
        if self.channels % self.heads != 0 {
            return bad(format!(
                "channels ({}) must be divisible by heads ({})",
                self.channels, self.heads
            ));
        }
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        match &self.focus {
            FocusSchedule::PerBlock(ks) => {
                if ks.len() != self.blocks.len() {
                    return bad(format!(
                        "{} retention budgets given for {} blocks",
                        ks.len(),
                        self.blocks.len()
                    ));
                }
                if ks.contains(&0) {
                    return bad("retention budgets must be positive".into());
                }
                if ks.windows(2).any(|w| w[1] > w[0]) {
                    return bad("retention budgets must be nonincreasing across blocks".into());
                }
            }
            FocusSchedule::Geometric { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return bad(format!("focus ratio must lie in (0, 1), got {alpha}"));
                }
            }
        }
        Ok(())
    }

    pub fn total_layers(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Tokens per window, `W²`.
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// 0-based block holding a 1-based global layer.
    pub fn block_of(&self, global_layer: usize) -> usize {
        let mut end = 0;
        for (b, &n) in self.blocks.iter().enumerate() {
            end += n;
            if global_layer <= end {
                return b;
            }
        }
        self.blocks.len() - 1
    }

    /// `K^l` for every layer, clamped to the window's token count.
    pub fn layer_budgets(&self) -> Vec<usize> {
        (1..=self.total_layers())
            .map(|l| k_for_layer(self, l).min(self.tokens()))
            .collect()
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetName::Pft => "pft",
            PresetName::PftLight => "pft_light",
            PresetName::Desk => "desk",
        })
    }
}

/// `round(n · α^(layer-1))`, evaluated exactly on the binary value of `α`,
/// halves rounded away from zero, floored at 1.
pub fn geometric_budget(n: usize, alpha: f64, layer: usize) -> usize {
    if layer <= 1 {
        return n;
    }
    let a = BigRational::from_float(alpha).expect("finite focus ratio");
    let mut power = BigRational::one();
    for _ in 1..layer {
        power *= &a;
    }
    let k = (power * BigRational::from_integer(BigInt::from(n))).round();
    k.to_integer().to_usize().unwrap_or(usize::MAX).max(1)
}

/// Retention budget for a 1-based global layer, before clamping to `N`.
pub fn k_for_layer(preset: &ModelPreset, global_layer: usize) -> usize {
    match &preset.focus {
        FocusSchedule::PerBlock(ks) => ks[preset.block_of(global_layer)],
        FocusSchedule::Geometric { alpha } => {
            geometric_budget(preset.tokens(), *alpha, global_layer)
        }
    }
}

/// Projection matrices for one layer, each `C × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub q: DenseMatrix,
    pub k: DenseMatrix,
    pub v: DenseMatrix,
    pub o: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    layers: Vec<Projections>,
}

impl LayerWeights {
    /// Gaussian projections: `W_q`, `W_k`, `W_v` with standard deviation
    /// `1/√C`, `W_o` with `1/√(C·L)` so the residual stream stays bounded
    /// without normalisation layers. Layer `l`, projection `p` draws from
    /// seed `seed ^ ((4l + p + 1) · 0x9E3779B97F4A7C15)`.
    pub fn seeded(layers: usize, channels: usize, seed: u64) -> Self {
        let sd = 1.0 / (channels as f64).sqrt();
        let sd_out = sd / (layers.max(1) as f64).sqrt();
        let draw = |l: usize, p: usize| {
            let salt = ((4 * l + p + 1) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let s = if p == 3 { sd_out } else { sd };
            seeded_fill(
                channels,
                channels,
                seed ^ salt,
                FillDistribution::Gaussian(s),
            )
        };
        let layers = (0..layers)
            .map(|l| Projections {
                q: draw(l, 0),
                k: draw(l, 1),
                v: draw(l, 2),
                o: draw(l, 3),
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Projections>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Projections] {
        &self.layers
    }
}

pub fn build_preset(name: PresetName, seed: u64) -> (ModelPreset, LayerWeights) {
    let preset = match name {
        PresetName::Pft => ModelPreset::pft(),
        PresetName::PftLight => ModelPreset::pft_light(),
        PresetName::Desk => ModelPreset::desk(),
    };
    let weights = LayerWeights::seeded(preset.total_layers(), preset.channels, seed);
    (preset, weights)
}

/// Weights for a custom preset, after validating it.
pub fn build_custom(preset: ModelPreset, seed: u64) -> Result<(ModelPreset, LayerWeights)> {
    preset.validate()?;
    let weights = LayerWeights::seeded(preset.total_layers(), preset.channels, seed);
    Ok((preset, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Vanilla,
    TopK,
    Progressive,
    Pfa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::TopK,
        Variant::Progressive,
        Variant::Pfa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::TopK => "topk",
            Variant::Progressive => "progressive",
            Variant::Pfa => "pfa",
        }
    }

    fn chains(self) -> bool {
        matches!(self, Variant::Progressive | Variant::Pfa)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant `{s}`")))
    }
}

/// The two pathways: odd layers (unshifted) and even layers (shifted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    pub fn of_layer(layer: usize) -> Self {
        if layer % 2 == 1 {
            Parity::Odd
        } else {
            Parity::Even
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parity::Odd => "odd",
            Parity::Even => "even",
        }
    }

    fn slot(self) -> usize {
        match self {
            Parity::Odd => 0,
            Parity::Even => 1,
        }
    }
}

/// Inherited `(A, I)` pairs for one parity pathway, indexed by
/// `window * heads + head`.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub parity: Parity,
    pub layers_consumed: usize,
    num_windows: usize,
    heads: usize,
    cells: Vec<(RowSparseMatrix, IndexMask)>,
}

impl ChainState {
    /// All-ones `A⁰` and `I⁰` for every (window, head).
    pub fn initial(parity: Parity, num_windows: usize, heads: usize, tokens: usize) -> Self {
        let cell = (
            RowSparseMatrix::ones(tokens),
            IndexMask::full(tokens, tokens),
        );
        Self {
            parity,
            layers_consumed: 0,
            num_windows,
            heads,
            cells: vec![cell; num_windows * heads],
        }
    }

    pub fn cell(&self, window: usize, head: usize) -> (&RowSparseMatrix, &IndexMask) {
        let (a, i) = &self.cells[window * self.heads + head];
        (a, i)
    }
}

/// Query row whose attention weights are copied into the trace each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowCapture {
    pub window: usize,
    pub head: usize,
    pub row: usize,
}

#[derive(Debug, Clone)]
pub struct CascadeOptions {
    pub variant: Variant,
    pub renormalize_after_topk: bool,
    /// Worker threads for the per-window fan-out; 0 uses rayon's default.
    pub threads: usize,
    /// Keep every attention map in the trace (memory heavy).
    pub record_maps: bool,
    pub capture: Option<RowCapture>,
}

impl CascadeOptions {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            renormalize_after_topk: false,
            threads: 0,
            record_maps: false,
            capture: None,
        }
    }
}

/// Summary of one (layer, window, head) attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub window: usize,
    pub head: usize,
    pub rows: usize,
    /// Σ over rows of the stored entry count.
    pub support_total: u64,
    pub support_min: usize,
    pub support_max: usize,
    /// Σ over rows of the inherited mask's entry count; `N²` when no chain.
    pub parent_support_total: u64,
    pub row_sum_min: f64,
    pub row_sum_max: f64,
    /// Σ over rows of the entropy of the row after rescaling it to sum 1.
    pub entropy_total: f64,
    /// Σ over rows of |support ∩ parent support| / |support|, when chained.
    pub overlap_total: Option<f64>,
    pub score_macs: u64,
    pub aggregate_macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// 1-based global layer index.
    pub layer: usize,
    /// 0-based block index.
    pub block: usize,
    pub parity: Parity,
    pub shift: Shift,
    /// Budget applied at this layer, already clamped to `N`.
    pub budget: usize,
    pub projection_macs: u64,
    /// Indexed by `window * heads + head`.
    pub cells: Vec<CellSummary>,
    pub maps: Option<Vec<RowSparseMatrix>>,
    /// `(column, weight)` entries of the captured query row.
    pub captured_row: Option<Vec<(u32, f64)>>,
}

impl LayerTrace {
    pub fn score_macs(&self) -> u64 {
        self.cells.iter().map(|c| c.score_macs).sum()
    }

    pub fn aggregate_macs(&self) -> u64 {
        self.cells.iter().map(|c| c.aggregate_macs).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTrace {
    pub variant: Variant,
    pub renormalize_after_topk: bool,
    pub window: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub channels: usize,
    pub tokens: usize,
    pub num_windows: usize,
    pub original_size: (usize, usize),
    pub padded_size: (usize, usize),
    pub layers: Vec<LayerTrace>,
}

struct WindowOutcome {
    tokens: DenseMatrix,
    cells: Vec<CellSummary>,
    chain: Vec<(RowSparseMatrix, IndexMask)>,
    maps: Vec<RowSparseMatrix>,
    captured: Option<Vec<(u32, f64)>>,
}

struct LayerContext<'a> {
    projections: &'a Projections,
    variant: Variant,
    budget: usize,
    renormalize: bool,
    heads: usize,
    keep_maps: bool,
    capture: Option<RowCapture>,
}

fn summarize(
    window: usize,
    head: usize,
    attention: &RowSparseMatrix,
    parent: Option<&IndexMask>,
    score_macs: u64,
    aggregate_macs: u64,
) -> CellSummary {
    let rows = attention.rows();
    let mut s = CellSummary {
        window,
        head,
        rows,
        support_total: 0,
        support_min: usize::MAX,
        support_max: 0,
        parent_support_total: parent.map_or((rows * attention.cols()) as u64, |m| m.nnz() as u64),
        row_sum_min: f64::INFINITY,
        row_sum_max: f64::NEG_INFINITY,
        entropy_total: 0.0,
        overlap_total: parent.map(|_| 0.0),
        score_macs,
        aggregate_macs,
    };
    for i in 0..rows {
        let (cols, vals) = attention.row(i);
        let nnz = cols.len();
        s.support_total += nnz as u64;
        s.support_min = s.support_min.min(nnz);
        s.support_max = s.support_max.max(nnz);
        let sum: f64 = vals.iter().sum();
        s.row_sum_min = s.row_sum_min.min(sum);
        s.row_sum_max = s.row_sum_max.max(sum);
        s.entropy_total += row_entropy(vals);
        if let (Some(mask), Some(total)) = (parent, s.overlap_total.as_mut()) {
            let inside = cols
                .iter()
                .filter(|&&c| mask.contains(i, c as usize))
                .count();
            *total += inside as f64 / nnz as f64;
        }
    }
    s
}

fn process_window(
    window: usize,
    x: &DenseMatrix,
    chain: Option<&[(RowSparseMatrix, IndexMask)]>,
    ctx: &LayerContext<'_>,
) -> Result<WindowOutcome> {
    let p = ctx.projections;
    let q_all = dense_matmul(x, &p.q)?;
    let k_all = dense_matmul(x, &p.k)?;
    let v_all = dense_matmul(x, &p.v)?;
    let n = x.rows();
    let c = x.cols();
    let d = c / ctx.heads;
    let mut concat = vec![0.0; n * c];
    let mut cells = Vec::with_capacity(ctx.heads);
    let mut next_chain = Vec::new();
    let mut maps = Vec::new();
    let mut captured = None;
    for h in 0..ctx.heads {
        let inputs = AttentionInputs::new(
            q_all.column_slice(h * d, d),
            k_all.column_slice(h * d, d),
            v_all.column_slice(h * d, d),
        )?;
        let parent = chain.map(|cells| &cells[h]);
        let (attention, mask, output, ms, ma) = match ctx.variant {
            Variant::Vanilla => {
                let r = vanilla_attention(&inputs)?;
                (r.attention, None, r.output, r.macs_scores, r.macs_aggregate)
            }
            Variant::TopK => {
                let r = topk_attention(&inputs, ctx.budget)?;
                (r.attention, None, r.output, r.macs_scores, r.macs_aggregate)
            }
            Variant::Progressive => {
                let (prev, _) = parent.expect("progressive variant runs on a chain");
                let r = progressive_attention_step(&inputs, prev)?;
                let mask = r.attention.support();
                (
                    r.attention,
                    Some(mask),
                    r.output,
                    r.macs_scores,
                    r.macs_aggregate,
                )
            }
            Variant::Pfa => {
                let (prev, prev_mask) = parent.expect("pfa variant runs on a chain");
                let r = pfa_step(&inputs, prev, prev_mask, ctx.budget, ctx.renormalize)?;
                (
                    r.attention,
                    Some(r.mask),
                    r.output,
                    r.macs_scores,
                    r.macs_aggregate,
                )
            }
        };
        for i in 0..n {
            concat[i * c + h * d..i * c + (h + 1) * d].copy_from_slice(output.row(i));
        }
        cells.push(summarize(
            window,
            h,
            &attention,
            parent.map(|(_, m)| m),
            ms,
            ma,
        ));
        if let Some(cap) = ctx.capture.filter(|c| c.window == window && c.head == h) {
            let (cols, vals) = attention.row(cap.row);
            captured = Some(cols.iter().copied().zip(vals.iter().copied()).collect());
        }
        if ctx.keep_maps {
            maps.push(attention.clone());
        }
        if let Some(mask) = mask {
            next_chain.push((attention, mask));
        }
    }
    let concat = DenseMatrix::from_vec(n, c, concat)?;
    let projected = dense_matmul(&concat, &p.o)?;
    let residual: Vec<f64> = x
        .values()
        .iter()
        .zip(projected.values())
        .map(|(a, b)| a + b)
        .collect();
    Ok(WindowOutcome {
        tokens: DenseMatrix::from_vec(n, c, residual)?,
        cells,
        chain: next_chain,
        maps,
        captured,
    })
}

/// Runs every layer of `preset` over `input` with the chosen attention
/// variant. Each layer adds its projected attention output back onto its
/// input; chained variants inherit from the latest layer of the same parity.
pub fn run_cascade(
    preset: &ModelPreset,
    weights: &LayerWeights,
    input: &FeatureMap,
    options: &CascadeOptions,
) -> Result<(FeatureMap, CascadeTrace)> {
    preset.validate()?;
    if input.channels() != preset.channels {
        return Err(Error::InvalidParameter(format!(
            "input has {} channels, preset expects {}",
            input.channels(),
            preset.channels
        )));
    }
    let total = preset.total_layers();
    if weights.layers().len() != total {
        return Err(Error::InvalidParameter(format!(
            "{} weight sets for {total} layers",
            weights.layers().len()
        )));
    }
    let c = preset.channels;
    for (l, p) in weights.layers().iter().enumerate() {
        for m in [&p.q, &p.k, &p.v, &p.o] {
            if m.rows() != c || m.cols() != c {
                return Err(Error::InvalidParameter(format!(
                    "layer {} projection is {}x{}, expected {c}x{c}",
                    l + 1,
                    m.rows(),
                    m.cols()
                )));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let n = preset.tokens();
    let mut x = input.clone();
    let mut chains: [Option<ChainState>; 2] = [None, None];
    let mut geometry: Option<((usize, usize), usize)> = None;
    let mut layers = Vec::with_capacity(total);

    for l in 1..=total {
        let shift = parity_shift(l, preset.window);
        let mut batch = partition(&x, preset.window, shift)?;
        let nw = batch.num_windows();
        match geometry {
            None => {
                if let Some(cap) = options.capture {
                    if cap.window >= nw || cap.head >= preset.heads || cap.row >= n {
                        return Err(Error::InvalidParameter(format!(
                            "captured row (window {}, head {}, row {}) is outside {nw} windows, {} heads, {n} rows",
                            cap.window, cap.head, cap.row, preset.heads
                        )));
                    }
                }
                geometry = Some((batch.padded_size(), nw));
            }
            Some(g) if g != (batch.padded_size(), nw) => {
                return Err(Error::GeometryMismatch(format!(
                    "layer {l}: window grid changed from {:?} to {:?}",
                    g,
                    (batch.padded_size(), nw)
                )));
            }
            Some(_) => {}
        }
        let parity = Parity::of_layer(l);
        let budget = k_for_layer(preset, l).min(n);
        let chain = if options.variant.chains() {
            let slot = &mut chains[parity.slot()];
            let state =
                slot.get_or_insert_with(|| ChainState::initial(parity, nw, preset.heads, n));
            if state.num_windows != nw {
                return Err(Error::GeometryMismatch(format!(
                    "layer {l}: {} chain windows for {nw} windows",
                    state.num_windows
                )));
            }
            Some(&*state)
        } else {
            None
        };
        let ctx = LayerContext {
            projections: &weights.layers()[l - 1],
            variant: options.variant,
            budget,
            renormalize: options.renormalize_after_topk,
            heads: preset.heads,
            keep_maps: options.record_maps,
            capture: options.capture,
        };
        let outcomes: Vec<WindowOutcome> = pool.install(|| {
            batch
                .windows()
                .par_iter()
                .enumerate()
                .map(|(w, tokens)| {
                    let cells = chain.map(|s| &s.cells[w * s.heads..(w + 1) * s.heads]);
                    process_window(w, tokens, cells, &ctx)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut new_tokens = Vec::with_capacity(nw);
        let mut cells = Vec::with_capacity(nw * preset.heads);
        let mut new_chain = Vec::new();
        let mut maps = Vec::new();
        let mut captured_row = None;
        for o in outcomes {
            captured_row = captured_row.or(o.captured);
            new_tokens.push(o.tokens);
            cells.extend(o.cells);
            new_chain.extend(o.chain);
            maps.extend(o.maps);
        }
        if options.variant.chains() {
            let state = chains[parity.slot()].as_mut().expect("chain initialised");
            state.cells = new_chain;
            state.layers_consumed += 1;
        }
        batch.replace_windows(new_tokens)?;
        x = merge(&batch);
        layers.push(LayerTrace {
            layer: l,
            block: preset.block_of(l),
            parity,
            shift,
            budget,
            projection_macs: (4 * nw * n * c * c) as u64,
            cells,
            maps: options.record_maps.then_some(maps),
            captured_row,
        });
    }

    let (padded_size, num_windows) = geometry.expect("at least one layer");
    Ok((
        x,
        CascadeTrace {
            variant: options.variant,
            renormalize_after_topk: options.renormalize_after_topk,
            window: preset.window,
            heads: preset.heads,
            head_dim: preset.head_dim(),
            channels: c,
            tokens: n,
            num_windows,
            original_size: (input.height(), input.width()),
            padded_size,
            layers,
        },
    ))
}
