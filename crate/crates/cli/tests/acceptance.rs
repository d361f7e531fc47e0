//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so every criterion reports even when an earlier
//! one fails. The process exits 0 unless `PFA_ACCEPTANCE_STRICT=1`.

use std::time::{Duration, Instant};

use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use pfa_cli::bench::scores_pair;
use pfa_cli::run;
use pfa_cli::verify::{chain_differential, ChainSuite, Status};
use pfa_cli::RunConfig;
use pfa_core::cascade::geometric_budget;
use pfa_core::metrics::{layer_costs, omega_pfa, omega_sa, reconcile, CostMode, CostModelInput};
use pfa_core::{
    build_custom, build_preset, merge, partition, pfa_step, row_normalize, run_cascade,
    seeded_fill, AttentionInputs, CascadeOptions, FeatureMap, FillDistribution, FocusSchedule,
    IndexMask, ModelPreset, PresetName, RowSparseMatrix, Shift, Variant,
};

const ORACLE_TOL: f64 = 1e-10;
const COLLAPSE_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-9;
const POWER_TOL: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const PROPERTY_CASES: u32 = 1000;
const KERNEL_RATIO: f64 = 0.35;

struct Outcome {
    passed: bool,
    detail: String,
}

fn pass_if(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn oracle_equivalence() -> Outcome {
    let suite = ChainSuite::new(0..100);
    let start = Instant::now();
    let check = match chain_differential(&suite, None) {
        Ok(c) => c,
        Err(e) => return pass_if(false, e.to_string()),
    };
    let elapsed = start.elapsed();
    let ok =
        check.status == Status::Pass && check.max_diff <= ORACLE_TOL && elapsed < ORACLE_BUDGET;
    let mut detail = format!(
        "{} chains (100 seeds, N in {{16,64,256}}, d in {{2,8,16}}, 6 steps, full/halving/quartering), max diff {:e} <= {ORACLE_TOL:e}, {:.1}s < 60s",
        check.cases,
        check.max_diff,
        elapsed.as_secs_f64()
    );
    if !check.detail.is_empty() {
        detail.push_str(&format!("; {}", check.detail));
    }
    pass_if(ok, detail)
}

fn full_budget(preset: &ModelPreset) -> ModelPreset {
    let mut p = preset.clone();
    p.focus = FocusSchedule::PerBlock(vec![p.tokens(); p.blocks.len()]);
    p
}

fn degenerate_collapse() -> Outcome {
    let (preset, weights) = build_preset(PresetName::Desk, 7);
    let preset = full_budget(&preset);
    let input = FeatureMap::synthetic(32, 32, preset.channels, 7);
    let run = |v| run_cascade(&preset, &weights, &input, &CascadeOptions::new(v)).map(|r| r.0);
    match (
        run(Variant::Pfa),
        run(Variant::Vanilla),
        run(Variant::Progressive),
    ) {
        (Ok(pfa), Ok(vanilla), Ok(progressive)) => {
            let d = pfa.max_abs_diff(&vanilla);
            let p = pfa.max_abs_diff(&progressive);
            pass_if(
                d <= COLLAPSE_TOL,
                format!(
                    "desk geometry, K=N for all {} layers, 32x32 map: max |pfa - vanilla| = {d:e} (tolerance {COLLAPSE_TOL:e}); max |pfa - progressive| = {p:e}",
                    preset.total_layers()
                ),
            )
        }
        _ => pass_if(false, "cascade failed"),
    }
}

fn schedule_arithmetic() -> Outcome {
    let k1 = geometric_budget(1024, 0.5, 1);
    let k5 = geometric_budget(1024, 0.5, 5);
    let ratio = Ratio::new(k5, k1);
    let cost = CostModelInput {
        h: 64,
        w: 64,
        channels: 60,
        window: 32,
        layers: 5,
        alpha: 0.5,
        mode: CostMode::PfaGeometric,
    };
    let terms = layer_costs(&cost).expect("valid cost model");
    let term_ratio = Ratio::new(terms[4].attention, terms[0].attention);
    pass_if(
        ratio == Ratio::new(1, 16) && term_ratio == Ratio::new(1, 16),
        format!("K1 = {k1}, K5 = {k5}, K5/K1 = {ratio}, layer-5/layer-1 attention term = {term_ratio} (want 1/16 = 0.0625)"),
    )
}

fn mac_reconciliation() -> Outcome {
    let mut failures = Vec::new();
    let mut layers = 0;
    let mut configs: Vec<(ModelPreset, usize)> = Vec::new();
    let desk = ModelPreset::desk();
    configs.push((desk.clone(), 48));
    let mut geo = desk.clone();
    geo.focus = FocusSchedule::Geometric { alpha: 0.5 };
    configs.push((geo, 40));
    let small = ModelPreset::custom(
        "small",
        vec![3, 3],
        2,
        8,
        4,
        FocusSchedule::PerBlock(vec![10, 3]),
    )
    .expect("valid preset");
    configs.push((small, 13));
    for (preset, side) in configs {
        let (preset, weights) = build_custom(preset, 3).expect("valid preset");
        let input = FeatureMap::synthetic(side, side, preset.channels, 5);
        for variant in Variant::ALL {
            let (_, trace) = run_cascade(&preset, &weights, &input, &CascadeOptions::new(variant))
                .expect("cascade runs");
            let mode = match &preset.focus {
                FocusSchedule::Geometric { .. } => CostMode::PfaGeometric,
                FocusSchedule::PerBlock(_) => CostMode::PfaSchedule(preset.layer_budgets()),
            };
            let cost = CostModelInput {
                h: side,
                w: side,
                channels: preset.channels,
                window: preset.window,
                layers: preset.total_layers(),
                alpha: 0.5,
                mode,
            };
            let report = reconcile(&trace, &cost).expect("geometry matches");
            layers += report.layers.len();
            for l in report.layers.iter().filter(|l| !l.matches()) {
                failures.push(format!("{} {variant} layer {}", preset.name, l.layer));
            }
        }
    }
    let mut omega = Vec::new();
    for preset in [ModelPreset::pft(), ModelPreset::pft_light()] {
        let n = preset.tokens();
        let base = CostModelInput {
            h: 128,
            w: 96,
            channels: preset.channels,
            window: preset.window,
            layers: preset.total_layers(),
            alpha: 0.5,
            mode: CostMode::Sa,
        };
        let full = CostModelInput {
            mode: CostMode::PfaSchedule(vec![n; preset.total_layers()]),
            ..base.clone()
        };
        let (sa, pfa) = (omega_sa(&base).unwrap(), omega_pfa(&full).unwrap());
        if sa != pfa {
            failures.push(format!(
                "{}: omega_pfa(all W^2) {pfa} != omega_sa {sa}",
                preset.name
            ));
        }
        omega.push(format!("{} {sa}", preset.name));
    }
    pass_if(
        failures.is_empty(),
        format!(
            "{layers} layers across 3 geometries x 4 variants; omega_pfa(all W^2) == omega_sa for {}{}",
            omega.join(", "),
            if failures.is_empty() { String::new() } else { format!("; mismatches: {}", failures.join("; ")) }
        ),
    )
}

fn positive_rows(max_n: usize) -> impl Strategy<Value = (usize, Vec<Vec<(usize, f64)>>)> {
    (1..=max_n).prop_flat_map(|n| {
        let row = proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n)
            .prop_flat_map(|cols| {
                let len = cols.len();
                (Just(cols), proptest::collection::vec(1e-3f64..10.0, len))
            })
            .prop_map(|(cols, vals)| cols.into_iter().zip(vals).collect::<Vec<_>>());
        (Just(n), proptest::collection::vec(row, n))
    })
}

fn inputs(n: usize, d: usize, seed: u64) -> AttentionInputs {
    let g = FillDistribution::Gaussian(1.0);
    AttentionInputs::new(
        seeded_fill(n, d, seed, g),
        seeded_fill(n, d, seed ^ 0xA5, g),
        seeded_fill(n, d, seed ^ 0x5A, g),
    )
    .expect("consistent shapes")
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map(|_| PROPERTY_CASES)
        .map_err(|e| format!("{name}: {e}"))
}

fn structural_invariants() -> Outcome {
    let mut total = 0;
    let mut failures = Vec::new();
    let mut record = |r: Result<u32, String>| match r {
        Ok(n) => total += n,
        Err(e) => failures.push(e),
    };

    record(run_property(
        "normalized row sums",
        positive_rows(24),
        |(n, rows)| {
            let m = RowSparseMatrix::from_rows(n, rows).unwrap();
            let out = row_normalize(&m).unwrap();
            for i in 0..n {
                prop_assert!((out.row_sum(i) - 1.0).abs() <= ROW_SUM_TOL);
            }
            Ok(())
        },
    ));

    let chain = (
        2usize..40,
        1usize..9,
        any::<u64>(),
        proptest::collection::vec(1usize..48, 1..6),
        any::<bool>(),
    );
    record(run_property(
        "chain support and occupancy",
        chain,
        |(n, d, seed, ks, renorm)| {
            let mut prev = RowSparseMatrix::ones(n);
            let mut mask = IndexMask::full(n, n);
            for (l, &k) in ks.iter().enumerate() {
                let step = pfa_step(
                    &inputs(n, d, seed.wrapping_add(l as u64)),
                    &prev,
                    &mask,
                    k,
                    renorm,
                )
                .unwrap();
                for i in 0..n {
                    let (cols, vals) = step.attention.row(i);
                    prop_assert_eq!(cols.len(), k.min(prev.row_nnz(i)));
                    for &j in cols {
                        prop_assert!(mask.contains(i, j as usize));
                        prop_assert!(step.mask.contains(i, j as usize));
                    }
                    let s: f64 = vals.iter().sum();
                    if renorm || cols.len() == prev.row_nnz(i) {
                        prop_assert!((s - 1.0).abs() <= ROW_SUM_TOL);
                    } else {
                        prop_assert!(s <= 1.0 + ROW_SUM_TOL);
                    }
                }
                prev = step.attention;
                mask = step.mask;
            }
            Ok(())
        },
    ));

    let maps = (
        2usize..7,
        1usize..4,
        1usize..4,
        1usize..4,
        any::<u64>(),
        any::<bool>(),
    );
    record(run_property(
        "partition/merge round trip",
        maps,
        |(ws, ry, rx, c, seed, shifted)| {
            let h = ws * ry + (seed as usize % ws);
            let w = ws * rx + ((seed >> 8) as usize % ws);
            let f = FeatureMap::synthetic(h, w, c, seed);
            let shift = if shifted {
                Shift {
                    dy: ws / 2,
                    dx: ws / 2,
                }
            } else {
                Shift::NONE
            };
            let back = merge(&partition(&f, ws, shift).unwrap());
            prop_assert_eq!(back.values().len(), f.values().len());
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            Ok(())
        },
    ));

    let power = (2usize..24, 1usize..9, any::<u64>(), 1usize..7);
    record(run_property(
        "constant-score sharpening",
        power,
        |(n, d, seed, layers)| {
            let inp = inputs(n, d, seed);
            let mut prev = RowSparseMatrix::ones(n);
            let mut mask = IndexMask::full(n, n);
            for _ in 0..layers {
                let step = pfa_step(&inp, &prev, &mask, n, false).unwrap();
                prev = step.attention;
                mask = step.mask;
            }
            let q = inp.q();
            let k = inp.k();
            let scale = 1.0 / (d as f64).sqrt();
            for i in 0..n {
                let s: Vec<f64> = (0..n)
                    .map(|j| (0..d).map(|p| q.get(i, p) * k.get(j, p)).sum::<f64>() * scale)
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
                let pw: Vec<f64> = s
                    .iter()
                    .map(|x| ((x - m).exp() / z).powi(layers as i32))
                    .collect();
                let zp: f64 = pw.iter().sum();
                for j in 0..n {
                    let got = prev.get(i, j).unwrap_or(0.0);
                    prop_assert!(
                        (got - pw[j] / zp).abs() <= POWER_TOL,
                        "row {} col {}: {} vs {}",
                        i,
                        j,
                        got,
                        pw[j] / zp
                    );
                }
            }
            Ok(())
        },
    ));

    pass_if(
        failures.is_empty(),
        format!(
            "{total} generated cases over 4 properties (row sums within {ROW_SUM_TOL:e}, nested support, nnz = min(K, parent), bit-exact round trip, power law within {POWER_TOL:e}){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn preset_fidelity() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str,
                     p: &ModelPreset,
                     blocks: &[usize],
                     layers: usize,
                     heads: usize,
                     channels: usize,
                     window: usize,
                     ks: &[usize]| {
        let fields = [
            ("blocks", p.blocks == blocks),
            ("block count", p.blocks.len() == blocks.len()),
            ("layers", p.total_layers() == layers),
            ("heads", p.heads == heads),
            ("channels", p.channels == channels),
            ("window", p.window == window),
            ("K list", p.focus == FocusSchedule::PerBlock(ks.to_vec())),
        ];
        for (field, ok) in fields {
            if !ok {
                failures.push(format!("{name} {field}"));
            }
        }
    };
    let (pft, _) = build_preset(PresetName::Pft, 0);
    check(
        "pft",
        &pft,
        &[4, 4, 4, 6, 6, 6],
        30,
        6,
        240,
        32,
        &[1024, 256, 128, 64, 32, 16],
    );
    let (light, _) = build_preset(PresetName::PftLight, 0);
    check(
        "pft_light",
        &light,
        &[2, 4, 6, 6, 6],
        24,
        4,
        52,
        32,
        &[1024, 256, 128, 64, 32],
    );
    pass_if(
        failures.is_empty(),
        if failures.is_empty() {
            "pft: blocks [4,4,4,6,6,6], 30 layers, 6 heads, C 240, W 32, K [1024,256,128,64,32,16]; pft_light: blocks [2,4,6,6,6], 24 layers, 4 heads, C 52, W 32, K [1024,256,128,64,32]".to_string()
        } else {
            format!("mismatched fields: {}", failures.join(", "))
        },
    )
}

fn kernel_performance() -> Outcome {
    match scores_pair(1024, 64, 16, 5, 20, 0) {
        Ok((sparse, dense, sm, dm)) => {
            let ratio = sparse as f64 / dense as f64;
            pass_if(
                ratio <= KERNEL_RATIO && sm * 16 == dm,
                format!("N=1024 d=64 density 1/16: smm_scores median {sparse} ns, dense_scores median {dense} ns, ratio {ratio:.4} (limit {KERNEL_RATIO}); MACs {sm} vs {dm}"),
            )
        }
        Err(e) => pass_if(false, e.to_string()),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = RunConfig::default();
    cfg.height = 40;
    cfg.width = 40;
    cfg.seed = 11;
    cfg.export_row = Some(pfa_core::RowCapture {
        window: 1,
        head: 2,
        row: 37,
    });
    let max = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .max(4);
    let mut outputs = Vec::new();
    for (threads, repeat) in [(1, 0), (1, 1), (max, 0), (max, 1)] {
        cfg.threads = threads;
        cfg.out = dir.path().join(format!("t{threads}-r{repeat}"));
        let out = match run::run(&cfg) {
            Ok(o) => o,
            Err(e) => return pass_if(false, e.to_string()),
        };
        if let Err(e) = out.write_to(&cfg.out) {
            return pass_if(false, e.to_string());
        }
        let mut files = Vec::new();
        for (name, _) in &out.files {
            files.push((
                name.clone(),
                std::fs::read(cfg.out.join(name)).expect("written file"),
            ));
        }
        outputs.push((threads, repeat, files));
    }
    let reference = &outputs[0].2;
    let differing: Vec<String> = outputs[1..]
        .iter()
        .flat_map(|(t, r, files)| {
            files
                .iter()
                .zip(reference)
                .filter(|(a, b)| a != b)
                .map(move |((name, _), _)| format!("{name} (threads {t}, repeat {r})"))
        })
        .collect();
    let count = reference.len();
    let csvs = reference
        .iter()
        .filter(|(n, _)| n.ends_with(".csv"))
        .count();
    pass_if(
        differing.is_empty() && outputs.iter().all(|o| o.2.len() == count),
        format!(
            "{csvs} CSV + {} PGM files byte-identical across threads {{1, {max}}} x 2 runs{}",
            count - csvs,
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {}", differing.join(", "))
            }
        ),
    )
}

fn main() {
    // Numeric arguments select criteria; harness flags from `cargo test` are ignored.
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("dense-oracle equivalence", oracle_equivalence),
        (
            "degenerate collapse (pfa with K=N equals vanilla)",
            degenerate_collapse,
        ),
        ("focus-schedule arithmetic", schedule_arithmetic),
        ("cost-model reconciliation", mac_reconciliation),
        ("structural invariants", structural_invariants),
        ("preset fidelity", preset_fidelity),
        ("kernel performance", kernel_performance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = f();
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} {}. {name} [{:.1}s]: {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 && std::env::var("PFA_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
