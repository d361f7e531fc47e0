//! Run configuration: flat `key=value` files with `#` comments, where every
//! key can also be given as a `--key` flag. Flags win over the file, the
//! file wins over `PFA_THREADS`, which wins over built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pfa_core::{FocusSchedule, ModelPreset, PresetName, RowCapture, Variant};

use crate::error::{CliError, Result};

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "preset",
    "variant",
    "window",
    "alpha",
    "k-list",
    "blocks",
    "heads",
    "channels",
    "seed",
    "threads",
    "out",
    "renorm-topk",
    "height",
    "width",
    "input",
    "export-row",
    "inject-fault",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: PresetName,
    pub variant: Variant,
    pub window: Option<usize>,
    pub alpha: Option<f64>,
    pub k_list: Option<Vec<usize>>,
    pub blocks: Option<Vec<usize>>,
    pub heads: Option<usize>,
    pub channels: Option<usize>,
    pub seed: u64,
    /// 0 means one worker per available core.
    pub threads: usize,
    pub out: PathBuf,
    pub renorm_topk: bool,
    pub height: usize,
    pub width: usize,
    /// Raw tensor file; overrides the synthetic input when set.
    pub input: Option<PathBuf>,
    pub export_row: Option<RowCapture>,
    pub inject_fault: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: PresetName::Desk,
            variant: Variant::Pfa,
            window: None,
            alpha: None,
            k_list: None,
            blocks: None,
            heads: None,
            channels: None,
            seed: 0,
            threads: 0,
            out: PathBuf::from("pfa-out"),
            renorm_topk: false,
            height: 64,
            width: 64,
            input: None,
            export_row: None,
            inject_fault: false,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}={value}`: {why}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|p| parse_num(key, p))
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(bad(key, value, "empty list"))
            } else {
                Ok(v)
            }
        })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "" | "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(bad(key, other, "expected true or false")),
    }
}

pub fn parse_preset_name(value: &str) -> Result<PresetName> {
    match value.trim() {
        "pft" => Ok(PresetName::Pft),
        "pft_light" | "pft-light" => Ok(PresetName::PftLight),
        "desk" => Ok(PresetName::Desk),
        other => Err(bad("preset", other, "expected pft, pft_light or desk")),
    }
}

impl RunConfig {
    /// Applies one `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "preset" => self.preset = parse_preset_name(v)?,
            "variant" => self.variant = v.parse().map_err(|e| bad(key, v, e))?,
            "window" => self.window = Some(parse_num(key, v)?),
            "alpha" => self.alpha = Some(parse_num(key, v)?),
            "k-list" => self.k_list = Some(parse_list(key, v)?),
            "blocks" => self.blocks = Some(parse_list(key, v)?),
            "heads" => self.heads = Some(parse_num(key, v)?),
            "channels" => self.channels = Some(parse_num(key, v)?),
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "renorm-topk" => self.renorm_topk = parse_bool(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "export-row" => {
                let parts = parse_list(key, v)?;
                let [window, head, row] = parts[..] else {
                    return Err(bad(key, v, "expected window,head,row"));
                };
                self.export_row = Some(RowCapture { window, head, row });
            }
            "inject-fault" => self.inject_fault = parse_bool(key, v)?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown key `{other}`; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses config file text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key=value, got `{raw}`", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Renders every key; `apply_text` on the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "preset={}", self.preset);
        let _ = writeln!(s, "variant={}", self.variant);
        if let Some(w) = self.window {
            let _ = writeln!(s, "window={w}");
        }
        if let Some(a) = self.alpha {
            let _ = writeln!(s, "alpha={a:?}");
        }
        if let Some(k) = &self.k_list {
            let _ = writeln!(s, "k-list={}", join(k));
        }
        if let Some(b) = &self.blocks {
            let _ = writeln!(s, "blocks={}", join(b));
        }
        if let Some(h) = self.heads {
            let _ = writeln!(s, "heads={h}");
        }
        if let Some(c) = self.channels {
            let _ = writeln!(s, "channels={c}");
        }
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "renorm-topk={}", self.renorm_topk);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "width={}", self.width);
        if let Some(p) = &self.input {
            let _ = writeln!(s, "input={}", p.display());
        }
        if let Some(c) = self.export_row {
            let _ = writeln!(s, "export-row={},{},{}", c.window, c.head, c.row);
        }
        let _ = writeln!(s, "inject-fault={}", self.inject_fault);
        s
    }

    /// The model described by the preset plus any overrides.
    pub fn model(&self) -> Result<ModelPreset> {
        let mut m = match self.preset {
            PresetName::Pft => ModelPreset::pft(),
            PresetName::PftLight => ModelPreset::pft_light(),
            PresetName::Desk => ModelPreset::desk(),
        };
        let customised = self.window.is_some()
            || self.blocks.is_some()
            || self.heads.is_some()
            || self.channels.is_some()
            || self.k_list.is_some()
            || self.alpha.is_some();
        if let Some(w) = self.window {
            m.window = w;
        }
        if let Some(b) = &self.blocks {
            if b.len() != m.blocks.len() && self.k_list.is_none() && self.alpha.is_none() {
                return Err(CliError::Config(
                    "changing the block count needs a matching k-list or an alpha".into(),
                ));
            }
            m.blocks = b.clone();
        }
        if let Some(h) = self.heads {
            m.heads = h;
        }
        if let Some(c) = self.channels {
            m.channels = c;
        }
        match (&self.k_list, self.alpha) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "k-list and alpha are mutually exclusive".into(),
                ))
            }
            (Some(k), None) => m.focus = FocusSchedule::PerBlock(k.clone()),
            (None, Some(alpha)) => m.focus = FocusSchedule::Geometric { alpha },
            (None, None) => {}
        }
        if customised {
            m.name = format!("{}-custom", m.name);
        }
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }

    /// Worker count with 0 resolved to the machine's parallelism.
    pub fn resolved_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }
}

/// Collects `KEYS` values from the environment default and CLI overrides.
pub fn build(
    file: Option<&Path>,
    env_threads: Option<&str>,
    overrides: &BTreeMap<&'static str, String>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(t) = env_threads {
        cfg.set("threads", t)?;
    }
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_with_comments() {
        let mut c = RunConfig::default();
        c.apply_text("# demo\npreset = pft_light \nvariant=topk # inline\n\nk-list=64,32,16,8,4\nrenorm-topk=true\nexport-row=1,2,3\n")
            .unwrap();
        assert_eq!(c.preset, PresetName::PftLight);
        assert_eq!(c.variant, Variant::TopK);
        assert_eq!(c.k_list, Some(vec![64, 32, 16, 8, 4]));
        assert!(c.renorm_topk);
        assert_eq!(
            c.export_row,
            Some(RowCapture {
                window: 1,
                head: 2,
                row: 3
            })
        );
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("alpha=0.5\nwindow=8\nheads=2\nchannels=8\nseed=99\nout=/tmp/x y\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_key_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("colour=red").is_err());
        assert!(c.apply_text("window=big").is_err());
        assert!(c.apply_text("just a line").is_err());
        assert!(c.apply_text("export-row=1,2").is_err());
    }

    #[test]
    fn model_overrides_are_validated() {
        let mut c = RunConfig::default();
        c.set("channels", "9").unwrap();
        assert!(matches!(c.model(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.set("alpha", "0.5").unwrap();
        c.set("k-list", "1,1,1,1,1").unwrap();
        assert!(c.model().is_err());
        let mut c = RunConfig::default();
        c.set("alpha", "0.5").unwrap();
        assert_eq!(
            c.model().unwrap().focus,
            FocusSchedule::Geometric { alpha: 0.5 }
        );
    }

    #[test]
    fn flag_overrides_beat_file_and_env() {
        let mut o = BTreeMap::new();
        o.insert("threads", "3".to_string());
        let c = build(None, Some("7"), &o).unwrap();
        assert_eq!(c.threads, 3);
        let c = build(None, Some("7"), &BTreeMap::new()).unwrap();
        assert_eq!(c.threads, 7);
    }
}
