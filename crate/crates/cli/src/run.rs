//! Cascade runs with statistics, counter and heatmap exports.

use std::path::{Path, PathBuf};

use pfa_core::metrics::{attention_stats, reconcile, CostMode, CostModelInput};
use pfa_core::{
    build_custom, run_cascade, CascadeOptions, CascadeTrace, FeatureMap, FocusSchedule,
    LayerWeights, ModelPreset,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::formats;

/// Model, weights and input map described by `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<(ModelPreset, LayerWeights, FeatureMap)> {
    let (preset, weights) = build_custom(cfg.model()?, cfg.seed)?;
    let input = match &cfg.input {
        Some(path) => formats::read_tensor(path)?,
        None => {
            if cfg.height == 0 || cfg.width == 0 {
                return Err(CliError::Config("height and width must be positive".into()));
            }
            FeatureMap::synthetic(cfg.height, cfg.width, preset.channels, cfg.seed)
        }
    };
    if input.channels() != preset.channels {
        return Err(CliError::Config(format!(
            "input has {} channels, model expects {}",
            input.channels(),
            preset.channels
        )));
    }
    if input.height() < preset.window || input.width() < preset.window {
        return Err(CliError::Config(format!(
            "{}x{} input is smaller than the {} window",
            input.height(),
            input.width(),
            preset.window
        )));
    }
    Ok((preset, weights, input))
}

/// Closed-form cost model for the run geometry and budget schedule.
pub fn cost_input(cfg: &RunConfig, preset: &ModelPreset, input: &FeatureMap) -> CostModelInput {
    let (alpha, mode) = match (&preset.focus, cfg.variant) {
        (_, pfa_core::Variant::Vanilla | pfa_core::Variant::Progressive) => (0.5, CostMode::Sa),
        (FocusSchedule::Geometric { alpha }, _) => (*alpha, CostMode::PfaGeometric),
        (FocusSchedule::PerBlock(_), _) => (0.5, CostMode::PfaSchedule(preset.layer_budgets())),
    };
    CostModelInput {
        h: input.height(),
        w: input.width(),
        channels: preset.channels,
        window: preset.window,
        layers: preset.total_layers(),
        alpha,
        mode,
    }
}

/// Files produced by a run, as `(name, bytes)` in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub trace: CascadeTrace,
}

impl RunOutputs {
    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        write_files(dir, &self.files)
    }
}

pub fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    files
        .iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn pgm_name(layer: usize) -> String {
    format!("row_layer{layer:02}.pgm")
}

pub fn run(cfg: &RunConfig) -> Result<RunOutputs> {
    let (preset, weights, input) = prepare(cfg)?;
    let mut opts = CascadeOptions::new(cfg.variant);
    opts.renormalize_after_topk = cfg.renorm_topk;
    opts.threads = cfg.resolved_threads();
    opts.capture = cfg.export_row;
    let (_, trace) = run_cascade(&preset, &weights, &input, &opts).map_err(|e| match e {
        pfa_core::Error::InvalidParameter(m)
            if cfg.export_row.is_some() && m.contains("captured row") =>
        {
            CliError::Config(m)
        }
        other => other.into(),
    })?;
    let stats = attention_stats(&trace);
    let macs = reconcile(&trace, &cost_input(cfg, &preset, &input))?;
    let mut files = vec![
        (
            "stats.csv".to_string(),
            formats::stats_csv(&stats).into_bytes(),
        ),
        (
            "macs.csv".to_string(),
            formats::macs_csv(&macs).into_bytes(),
        ),
    ];
    if cfg.export_row.is_some() {
        for lt in &trace.layers {
            let row = lt.captured_row.as_deref().unwrap_or(&[]);
            files.push((pgm_name(lt.layer), formats::encode_pgm(preset.window, row)));
        }
    }
    Ok(RunOutputs { files, trace })
}
