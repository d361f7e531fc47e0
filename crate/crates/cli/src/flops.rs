//! Closed-form cost tables for a configured geometry.

use std::fmt::Write as _;

use num_rational::Ratio;
use pfa_core::metrics::{layer_costs, omega_pfa, omega_sa, CostMode, CostModelInput};
use pfa_core::FocusSchedule;

use crate::config::RunConfig;
use crate::error::Result;
use crate::formats;

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub input: CostModelInput,
    pub per_block: Option<Vec<usize>>,
    pub omega_sa: u128,
    pub omega_pfa: u128,
    pub attention_sa: u128,
    pub attention_pfa: u128,
    pub text: String,
    pub csv: String,
}

impl FlopsReport {
    /// `Ω(PFA) / Ω(SA)`, reduced.
    pub fn ratio(&self) -> Ratio<u128> {
        Ratio::new(self.omega_pfa, self.omega_sa)
    }

    /// Attention terms only.
    pub fn attention_ratio(&self) -> Ratio<u128> {
        Ratio::new(self.attention_pfa, self.attention_sa)
    }
}

fn ratio_text(r: Ratio<u128>) -> String {
    format!("{r} = {:.6}", *r.numer() as f64 / *r.denom() as f64)
}

pub fn flops(cfg: &RunConfig) -> Result<FlopsReport> {
    let preset = cfg.model()?;
    let (h, w) = match &cfg.input {
        Some(p) => {
            let f = formats::read_tensor(p)?;
            (f.height(), f.width())
        }
        None => (cfg.height, cfg.width),
    };
    let (alpha, mode, per_block) = match &preset.focus {
        FocusSchedule::Geometric { alpha } => (*alpha, CostMode::PfaGeometric, None),
        FocusSchedule::PerBlock(ks) => (
            0.5,
            CostMode::PfaSchedule(preset.layer_budgets()),
            Some(ks.clone()),
        ),
    };
    let input = CostModelInput {
        h,
        w,
        channels: preset.channels,
        window: preset.window,
        layers: preset.total_layers(),
        alpha,
        mode,
    };
    let sa_input = CostModelInput {
        mode: CostMode::Sa,
        ..input.clone()
    };
    let pfa_terms = layer_costs(&input)?;
    let sa_terms = layer_costs(&sa_input)?;
    let o_sa = omega_sa(&sa_input)?;
    let o_pfa = omega_pfa(&input)?;
    let attention_sa: u128 = sa_terms.iter().map(|t| t.attention).sum();
    let attention_pfa: u128 = pfa_terms.iter().map(|t| t.attention).sum();

    let mut report = FlopsReport {
        input,
        per_block,
        omega_sa: o_sa,
        omega_pfa: o_pfa,
        attention_sa,
        attention_pfa,
        text: String::new(),
        csv: formats::flops_csv(&pfa_terms, &sa_terms),
    };
    let mut text = String::new();
    let t = &mut text;
    let i = &report.input;
    let _ = writeln!(
        t,
        "model {} | map {}x{} | C {} | W {} | layers {}",
        preset.name, i.h, i.w, i.channels, i.window, i.layers
    );
    match &report.per_block {
        Some(ks) => {
            let _ = writeln!(t, "per-block K {ks:?} over blocks {:?}", preset.blocks);
        }
        None => {
            let _ = writeln!(t, "geometric K with alpha {}", i.alpha);
        }
    }
    let _ = writeln!(t, "omega_sa   {:>20} MACs {:>20} FLOPs", o_sa, 2 * o_sa);
    let _ = writeln!(t, "omega_pfa  {:>20} MACs {:>20} FLOPs", o_pfa, 2 * o_pfa);
    let _ = writeln!(
        t,
        "attention  {:>20} MACs (pfa) {:>20} MACs (sa)",
        attention_pfa, attention_sa
    );
    let r = ratio_text(report.ratio());
    let a = ratio_text(report.attention_ratio());
    let _ = writeln!(t, "ratio pfa/sa, MAC convention:  {r}");
    let _ = writeln!(t, "ratio pfa/sa, FLOP convention: {r}");
    let _ = writeln!(t, "attention-only ratio:          {a}");
    let _ = writeln!(
        t,
        "{:>5} {:>6} {:>16} {:>16} {:>10}",
        "layer", "K", "projection", "attention", "% of l=1"
    );
    let first = pfa_terms.first().map_or(1, |c| c.attention.max(1));
    for c in &pfa_terms {
        let _ = writeln!(
            t,
            "{:>5} {:>6} {:>16} {:>16} {:>9.4}%",
            c.layer,
            c.budget,
            c.projection,
            c.attention,
            c.attention as f64 * 100.0 / first as f64
        );
    }
    report.text = text;
    Ok(report)
}
