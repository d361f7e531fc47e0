//! File formats: raw tensors, 16-bit grayscale PGM heatmaps and the CSV
//! reports. Every renderer returns bytes so callers can compare outputs
//! without touching the filesystem.

use std::fmt::Write as _;
use std::path::Path;

use pfa_core::metrics::{LayerCost, LayerStats, MacReport};
use pfa_core::FeatureMap;

use crate::error::{CliError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PFT1";

/// `PFT1`, then `u32` h, w, c and `h·w·c` `f64`s, all little-endian,
/// channel-last.
pub fn encode_tensor(f: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + f.values().len() * 8);
    out.extend_from_slice(TENSOR_MAGIC);
    for dim in [f.height(), f.width(), f.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    let bad = |why: String| CliError::Config(format!("tensor file: {why}"));
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing PFT1 header".into()));
    }
    let dim = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| bad(format!("{h}x{w}x{c} overflows")))?;
    let body = &bytes[16..];
    if body.len() != count * 8 {
        return Err(bad(format!(
            "{h}x{w}x{c} needs {} payload bytes, found {}",
            count * 8,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    FeatureMap::new(h, w, c, values).map_err(|e| bad(e.to_string()))
}

pub fn read_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_tensor(&bytes)
}

/// One attention row laid out on its `side × side` window grid as a binary
/// 16-bit PGM. Entries outside the row's support are zero; the grid is
/// min-max scaled to `0..=65535`.
pub fn encode_pgm(side: usize, row: &[(u32, f64)]) -> Vec<u8> {
    let mut grid = vec![0.0f64; side * side];
    for &(col, v) in row {
        grid[col as usize] = v;
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{side} {side}\n65535\n").into_bytes();
    for &v in &grid {
        let level = if hi > lo {
            ((v - lo) / (hi - lo) * 65535.0).round() as u16
        } else if v > 0.0 {
            u16::MAX
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

/// Parses a file produced by [`encode_pgm`] back into its pixel levels.
pub fn decode_pgm(bytes: &[u8]) -> Option<(usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let px = bytes[pos..]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect::<Vec<_>>();
    (w == h && px.len() == w * h).then_some((w, px))
}

pub const STATS_HEADER: &str =
    "layer,parity,head,mean_support,max_support,mean_entropy,score_macs,aggregate_macs";

pub fn stats_csv(stats: &[LayerStats]) -> String {
    let mut s = String::from(STATS_HEADER);
    s.push('\n');
    for layer in stats {
        for h in &layer.heads {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{},{:.9},{},{}",
                layer.layer,
                layer.parity.name(),
                h.head,
                h.mean_support,
                h.max_support,
                h.mean_entropy,
                h.score_macs,
                h.aggregate_macs
            );
        }
    }
    s
}

pub const MACS_HEADER: &str = "layer,parity,budget,score_keys,aggregate_keys,analytic_score_macs,measured_score_macs,analytic_aggregate_macs,measured_aggregate_macs,projection_macs,match";

pub fn macs_csv(report: &MacReport) -> String {
    let mut s = String::from(MACS_HEADER);
    s.push('\n');
    for l in &report.layers {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            l.layer,
            l.parity.name(),
            l.budget,
            l.score_keys,
            l.aggregate_keys,
            l.analytic_score_macs,
            l.measured_score_macs,
            l.analytic_aggregate_macs,
            l.measured_aggregate_macs,
            l.measured_projection_macs,
            l.matches()
        );
    }
    s
}

pub const FLOPS_HEADER: &str =
    "layer,budget,projection_macs,attention_macs,attention_flops,attention_vs_layer1_pct,dense_attention_macs";

/// Per-layer closed-form terms next to the dense term at the same geometry.
pub fn flops_csv(pfa: &[LayerCost], sa: &[LayerCost]) -> String {
    let mut s = String::from(FLOPS_HEADER);
    s.push('\n');
    let first = pfa.first().map_or(1, |t| t.attention.max(1));
    for (p, d) in pfa.iter().zip(sa) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{}",
            p.layer,
            p.budget,
            p.projection,
            p.attention,
            2 * p.attention,
            p.attention as f64 * 100.0 / first as f64,
            d.attention
        );
    }
    s
}

pub const BENCH_HEADER: &str = "variant,N,d,density,median_ns,macs,ns_per_mac";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: &'static str,
    pub n: usize,
    pub d: usize,
    /// Kept keys per row over `n`, as a denominator: `4` means 1/4.
    pub density_den: usize,
    pub median_ns: u128,
    pub macs: u64,
}

impl BenchRow {
    pub fn ns_per_mac(&self) -> f64 {
        self.median_ns as f64 / self.macs.max(1) as f64
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        let density = if r.density_den == 1 {
            "1".to_string()
        } else {
            format!("1/{}", r.density_den)
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6}",
            r.variant,
            r.n,
            r.d,
            density,
            r.median_ns,
            r.macs,
            r.ns_per_mac()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let f = FeatureMap::synthetic(3, 5, 2, 11);
        let back = decode_tensor(&encode_tensor(&f)).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn tensor_rejects_truncation_and_bad_magic() {
        let mut bytes = encode_tensor(&FeatureMap::synthetic(2, 2, 1, 0));
        bytes.pop();
        assert!(decode_tensor(&bytes).is_err());
        assert!(decode_tensor(b"PFT2\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn tensor_header_layout() {
        let bytes = encode_tensor(&FeatureMap::zeros(2, 3, 4));
        assert_eq!(&bytes[..4], b"PFT1");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 24 * 8);
    }

    #[test]
    fn single_entry_row_lights_one_pixel() {
        let pgm = encode_pgm(4, &[(6, 1.0)]);
        assert!(pgm.starts_with(b"P5\n4 4\n65535\n"));
        let (side, px) = decode_pgm(&pgm).unwrap();
        assert_eq!(side, 4);
        assert_eq!(px.iter().filter(|&&p| p != 0).count(), 1);
        assert_eq!(px[6], 65535);
    }

    #[test]
    fn pgm_is_min_max_scaled() {
        let row = [(0, 0.1), (1, 0.3), (2, 0.2), (3, 0.4)];
        let (_, px) = decode_pgm(&encode_pgm(2, &row)).unwrap();
        assert_eq!(px, vec![0, 43690, 21845, 65535]);
    }

    #[test]
    fn bench_density_labels() {
        let rows = [
            BenchRow {
                variant: "smm_scores",
                n: 16,
                d: 2,
                density_den: 1,
                median_ns: 10,
                macs: 512,
            },
            BenchRow {
                variant: "smm_scores",
                n: 16,
                d: 2,
                density_den: 4,
                median_ns: 8,
                macs: 128,
            },
        ];
        let csv = bench_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], BENCH_HEADER);
        assert_eq!(lines[1], "smm_scores,16,2,1,10,512,0.019531");
        assert_eq!(lines[2], "smm_scores,16,2,1/4,8,128,0.062500");
    }
}
