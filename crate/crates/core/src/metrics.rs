//! Closed-form attention cost model and its reconciliation with the
//! multiply-accumulate counters recorded by the cascade.
//!
//! Counting convention: one multiply-accumulate is one MAC. For a window
//! of `N` tokens and channel width `C` (summed over heads), scoring every
//! query against `K` keys costs `N·K·C` MACs, and aggregating `K` values
//! costs the same again. The formula's attention term `2·K·hwC` is the sum
//! of the two, so the score counter alone equals half of it. Reports also
//! carry FLOPs, which are twice the MACs.

use crate::cascade::{geometric_budget, CascadeTrace, Parity, Variant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CostMode {
    /// Dense window attention.
    Sa,
    /// `K^l = round(W² · α^(l-1))`.
    PfaGeometric,
    /// Explicit per-layer budgets.
    PfaSchedule(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModelInput {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub window: usize,
    pub layers: usize,
    pub alpha: f64,
    pub mode: CostMode,
}

impl CostModelInput {
    fn validate(&self) -> Result<()> {
        if [self.h, self.w, self.channels, self.window, self.layers].contains(&0) {
            return Err(Error::InvalidParameter(
                "cost model dimensions must be positive".into(),
            ));
        }
        match &self.mode {
            CostMode::PfaGeometric if !(self.alpha > 0.0 && self.alpha < 1.0) => {
                Err(Error::InvalidParameter(format!(
                    "focus ratio must lie in (0, 1), got {}",
                    self.alpha
                )))
            }
            CostMode::PfaSchedule(ks) if ks.len() != self.layers => Err(Error::InvalidParameter(
                format!("{} budgets for {} layers", ks.len(), self.layers),
            )),
            CostMode::PfaSchedule(ks) if ks.contains(&0) => {
                Err(Error::InvalidParameter("budgets must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Tokens per window.
    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Budget `K^l` for every layer under the configured mode.
    pub fn budgets(&self) -> Vec<usize> {
        let n = self.tokens();
        match &self.mode {
            CostMode::Sa => vec![n; self.layers],
            CostMode::PfaGeometric => (1..=self.layers)
                .map(|l| geometric_budget(n, self.alpha, l))
                .collect(),
            CostMode::PfaSchedule(ks) => ks.clone(),
        }
    }
}

/// Per-layer terms of the closed form (FLOP convention, as printed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub layer: usize,
    pub budget: usize,
    /// `4hwC²`
    pub projection: u128,
    /// `2·K^l·hwC`
    pub attention: u128,
}

pub fn layer_costs(input: &CostModelInput) -> Result<Vec<LayerCost>> {
    input.validate()?;
    let hw = (input.h * input.w) as u128;
    let c = input.channels as u128;
    Ok(input
        .budgets()
        .into_iter()
        .enumerate()
        .map(|(i, k)| LayerCost {
            layer: i + 1,
            budget: k,
            projection: 4 * hw * c * c,
            attention: 2 * k as u128 * hw * c,
        })
        .collect())
}

/// `4hwLC² + 2W²hwLC`.
pub fn omega_sa(input: &CostModelInput) -> Result<u128> {
    input.validate()?;
    let (h, w, l, c, win) = (
        input.h as u128,
        input.w as u128,
        input.layers as u128,
        input.channels as u128,
        input.window as u128,
    );
    Ok(4 * h * w * l * c * c + 2 * win * win * h * w * l * c)
}

/// `Σ_l (4hwC² + 2·K^l·hwC)`.
pub fn omega_pfa(input: &CostModelInput) -> Result<u128> {
    Ok(layer_costs(input)?
        .iter()
        .map(|t| t.projection + t.attention)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMacs {
    pub layer: usize,
    pub parity: Parity,
    pub budget: usize,
    /// Keys each query is scored against, as implied by the schedule.
    pub score_keys: usize,
    /// Entries each attention row keeps, as implied by the schedule.
    pub aggregate_keys: usize,
    pub analytic_score_macs: u64,
    pub measured_score_macs: u64,
    pub analytic_aggregate_macs: u64,
    pub measured_aggregate_macs: u64,
    pub analytic_projection_macs: u64,
    pub measured_projection_macs: u64,
}

impl LayerMacs {
    pub fn matches(&self) -> bool {
        self.analytic_score_macs == self.measured_score_macs
            && self.analytic_aggregate_macs == self.measured_aggregate_macs
            && self.analytic_projection_macs == self.measured_projection_macs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacReport {
    pub variant: Variant,
    pub layers: Vec<LayerMacs>,
    pub measured_score_macs: u64,
    pub measured_aggregate_macs: u64,
    pub measured_projection_macs: u64,
    /// Score plus aggregate MACs of dense attention at the same geometry.
    pub dense_attention_macs: u64,
}

impl MacReport {
    pub fn all_match(&self) -> bool {
        self.layers.iter().all(LayerMacs::matches)
    }

    /// Measured attention MACs over the dense baseline, as `(num, den)`.
    pub fn reduction_fraction(&self) -> (u64, u64) {
        (
            self.measured_score_macs + self.measured_aggregate_macs,
            self.dense_attention_macs,
        )
    }

    pub fn reduction_ratio(&self) -> f64 {
        let (num, den) = self.reduction_fraction();
        num as f64 / den as f64
    }
}

/// Compares every layer's counters with what the schedule predicts.
///
/// Under the focused variant a layer scores each query against the keys its
/// same-parity predecessor kept, so its score work follows the previous
/// budget in that chain and its aggregation work follows its own.
pub fn reconcile(trace: &CascadeTrace, input: &CostModelInput) -> Result<MacReport> {
    input.validate()?;
    let padded = (
        input.h.div_ceil(input.window) * input.window,
        input.w.div_ceil(input.window) * input.window,
    );
    if input.window != trace.window
        || input.channels != trace.channels
        || input.layers != trace.layers.len()
        || padded != trace.padded_size
    {
        return Err(Error::GeometryMismatch(format!(
            "cost model describes {}x{} (padded {:?}), C={}, W={}, L={}; trace has padded {:?}, C={}, W={}, L={}",
            input.h,
            input.w,
            padded,
            input.channels,
            input.window,
            input.layers,
            trace.padded_size,
            trace.channels,
            trace.window,
            trace.layers.len()
        )));
    }
    let n = trace.tokens;
    let hw = (padded.0 * padded.1) as u64;
    let c = trace.channels as u64;
    let budgets: Vec<usize> = input.budgets().into_iter().map(|k| k.min(n)).collect();
    let mut chain_keys = [n, n];
    let mut layers = Vec::with_capacity(trace.layers.len());
    for (lt, &k) in trace.layers.iter().zip(&budgets) {
        let slot = match lt.parity {
            Parity::Odd => 0,
            Parity::Even => 1,
        };
        let (score_keys, aggregate_keys) = match trace.variant {
            Variant::Vanilla | Variant::Progressive => (n, n),
            Variant::TopK => (n, k),
            Variant::Pfa => {
                let inherited = chain_keys[slot];
                let kept = k.min(inherited);
                chain_keys[slot] = kept;
                (inherited, kept)
            }
        };
        layers.push(LayerMacs {
            layer: lt.layer,
            parity: lt.parity,
            budget: k,
            score_keys,
            aggregate_keys,
            analytic_score_macs: score_keys as u64 * hw * c,
            measured_score_macs: lt.score_macs(),
            analytic_aggregate_macs: aggregate_keys as u64 * hw * c,
            measured_aggregate_macs: lt.aggregate_macs(),
            analytic_projection_macs: 4 * hw * c * c,
            measured_projection_macs: lt.projection_macs,
        });
    }
    let sum = |f: fn(&LayerMacs) -> u64| layers.iter().map(f).sum::<u64>();
    Ok(MacReport {
        variant: trace.variant,
        measured_score_macs: sum(|l| l.measured_score_macs),
        measured_aggregate_macs: sum(|l| l.measured_aggregate_macs),
        measured_projection_macs: sum(|l| l.measured_projection_macs),
        dense_attention_macs: 2 * n as u64 * hw * c * trace.layers.len() as u64,
        layers,
    })
}

/// Natural-log entropy of a row after rescaling it to sum to one.
pub fn row_entropy(vals: &[f64]) -> f64 {
    let sum: f64 = vals.iter().sum();
    -vals
        .iter()
        .map(|&v| {
            let p = v / sum;
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadStats {
    pub head: usize,
    pub mean_support: f64,
    pub max_support: usize,
    pub mean_entropy: f64,
    pub score_macs: u64,
    pub aggregate_macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub parity: Parity,
    pub budget: usize,
    pub mean_support: f64,
    pub min_support: usize,
    pub max_support: usize,
    pub mean_entropy: f64,
    /// Mean fraction of each row's support that its chain parent also held.
    pub mean_overlap: Option<f64>,
    pub row_sum_min: f64,
    pub row_sum_max: f64,
    pub score_macs: u64,
    pub aggregate_macs: u64,
    pub heads: Vec<HeadStats>,
}

/// Per-layer (and per-head) support, entropy and overlap statistics.
pub fn attention_stats(trace: &CascadeTrace) -> Vec<LayerStats> {
    trace
        .layers
        .iter()
        .map(|lt| {
            let rows: usize = lt.cells.iter().map(|c| c.rows).sum();
            let rows_f = rows as f64;
            let support: u64 = lt.cells.iter().map(|c| c.support_total).sum();
            let entropy: f64 = lt.cells.iter().map(|c| c.entropy_total).sum();
            let overlap = lt
                .cells
                .iter()
                .map(|c| c.overlap_total)
                .sum::<Option<f64>>()
                .map(|t| t / rows_f);
            let heads = (0..trace.heads)
                .map(|h| {
                    let cells: Vec<_> = lt.cells.iter().filter(|c| c.head == h).collect();
                    let r: usize = cells.iter().map(|c| c.rows).sum();
                    HeadStats {
                        head: h,
                        mean_support: cells.iter().map(|c| c.support_total).sum::<u64>() as f64
                            / r as f64,
                        max_support: cells.iter().map(|c| c.support_max).max().unwrap_or(0),
                        mean_entropy: cells.iter().map(|c| c.entropy_total).sum::<f64>() / r as f64,
                        score_macs: cells.iter().map(|c| c.score_macs).sum(),
                        aggregate_macs: cells.iter().map(|c| c.aggregate_macs).sum(),
                    }
                })
                .collect();
            LayerStats {
                layer: lt.layer,
                parity: lt.parity,
                budget: lt.budget,
                mean_support: support as f64 / rows_f,
                min_support: lt.cells.iter().map(|c| c.support_min).min().unwrap_or(0),
                max_support: lt.cells.iter().map(|c| c.support_max).max().unwrap_or(0),
                mean_entropy: entropy / rows_f,
                mean_overlap: overlap,
                row_sum_min: lt
                    .cells
                    .iter()
                    .map(|c| c.row_sum_min)
                    .fold(f64::INFINITY, f64::min),
                row_sum_max: lt
                    .cells
                    .iter()
                    .map(|c| c.row_sum_max)
                    .fold(f64::NEG_INFINITY, f64::max),
                score_macs: lt.score_macs(),
                aggregate_macs: lt.aggregate_macs(),
                heads,
            }
        })
        .collect()
}
