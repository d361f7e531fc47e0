//! Verification suites: sparse kernels and focused-attention chains against
//! the dense replay, structural invariants of cascade traces, counter
//! reconciliation, thread-count determinism and the degenerate identities.

use std::fmt::Write as _;

use pfa_core::metrics::reconcile;
use pfa_core::{
    matrix::{seeded_fill, FillDistribution},
    pfa_step, run_cascade, smm_aggregate, smm_scores, AttentionInputs, CascadeOptions,
    CascadeTrace, DenseMatrix, FeatureMap, FocusSchedule, IndexMask, LayerWeights, ModelPreset,
    Parity, RowSparseMatrix, Variant,
};

use crate::config::RunConfig;
use crate::error::Result;
use crate::oracle::{self, Dense};
use crate::run::{cost_input, prepare};

pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
pub const FAULT_SIZE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported for information; never fails the run.
    Info,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub cases: usize,
    pub max_diff: f64,
    pub tolerance: f64,
    pub status: Status,
    pub detail: String,
}

impl Check {
    fn from_diff(suite: &'static str, name: impl Into<String>, cases: usize, diff: Diff) -> Self {
        let tolerance = diff.tolerance;
        let (status, detail) = match diff.first_failure {
            Some(at) => (Status::Fail, at),
            None => (Status::Pass, String::new()),
        };
        Self {
            suite,
            name: name.into(),
            cases,
            max_diff: diff.max,
            tolerance,
            status,
            detail,
        }
    }

    fn boolean(
        suite: &'static str,
        name: impl Into<String>,
        cases: usize,
        failure: Option<String>,
    ) -> Self {
        Self {
            suite,
            name: name.into(),
            cases,
            max_diff: 0.0,
            tolerance: 0.0,
            status: if failure.is_some() {
                Status::Fail
            } else {
                Status::Pass
            },
            detail: failure.unwrap_or_default(),
        }
    }
}

/// Running maximum of absolute differences, remembering where the first
/// one above tolerance occurred.
#[derive(Debug, Clone)]
struct Diff {
    tolerance: f64,
    max: f64,
    first_failure: Option<String>,
}

impl Diff {
    fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            max: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, got: f64, want: f64, at: impl FnOnce() -> String) {
        let d = (got - want).abs();
        let d = if d.is_nan() { f64::INFINITY } else { d };
        self.max = self.max.max(d);
        if d > self.tolerance && self.first_failure.is_none() {
            self.first_failure = Some(format!("{} got {got:e} want {want:e}", at()));
        }
    }

    fn fail(&mut self, at: impl FnOnce() -> String) {
        if self.first_failure.is_none() {
            self.first_failure = Some(at());
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = write!(
                s,
                "{} {}/{}: {} cases, max diff {:e}",
                c.status.name(),
                c.suite,
                c.name,
                c.cases,
                c.max_diff
            );
            if c.tolerance > 0.0 {
                let _ = write!(s, " (tolerance {:e})", c.tolerance);
            }
            if !c.detail.is_empty() {
                let _ = write!(s, " | {}", c.detail);
            }
            s.push('\n');
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("suite,check,cases,max_diff,tolerance,status,detail\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{},{}",
                c.suite,
                c.name,
                c.cases,
                c.max_diff,
                c.tolerance,
                c.status.name(),
                c.detail.replace(',', ";")
            );
        }
        s
    }
}

/// Where the self-test perturbs a sparse attention weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub seed: u64,
    pub layer: usize,
    pub row: usize,
}

/// Grid of chain-replay cases.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSuite {
    pub seeds: Vec<u64>,
    pub tokens: Vec<usize>,
    pub head_dims: Vec<usize>,
    pub layers: usize,
}

impl ChainSuite {
    pub fn new(seeds: impl IntoIterator<Item = u64>) -> Self {
        Self {
            seeds: seeds.into_iter().collect(),
            tokens: vec![16, 64, 256],
            head_dims: vec![2, 8, 16],
            layers: 6,
        }
    }

    /// Budget schedules exercised for a window of `n` tokens: no focusing,
    /// halving, and quartering down to a single key.
    pub fn schedules(&self, n: usize) -> Vec<(&'static str, Vec<usize>)> {
        let decay = |f: usize| {
            (0..self.layers)
                .map(|l| (n / f.pow(l as u32)).max(1))
                .collect()
        };
        vec![
            ("full", vec![n; self.layers]),
            ("halving", decay(2)),
            ("quartering", decay(4)),
        ]
    }

    pub fn case_count(&self) -> usize {
        self.seeds.len() * self.tokens.len() * self.head_dims.len() * 3
    }
}

fn draw(n: usize, d: usize, seed: u64, layer: usize, which: u64) -> DenseMatrix {
    let s = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((layer as u64) << 8 | which);
    seeded_fill(n, d, s, FillDistribution::Gaussian(1.0))
}

fn compare_dense(
    diff: &mut Diff,
    got: &DenseMatrix,
    want: &Dense,
    at: &dyn Fn(usize, usize) -> String,
) {
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            diff.record(got.get(i, j), w, || at(i, j));
        }
    }
}

/// Replays `layers`-step focused-attention chains through the sparse path
/// and the dense oracle, comparing attention maps, masks and outputs.
pub fn chain_differential(suite: &ChainSuite, fault: Option<Fault>) -> Result<Check> {
    let mut diff = Diff::new(ORACLE_TOLERANCE);
    let mut cases = 0;
    for &seed in &suite.seeds {
        for &n in &suite.tokens {
            for &d in &suite.head_dims {
                for (name, budgets) in suite.schedules(n) {
                    cases += 1;
                    let renorm = seed % 2 == 1;
                    let mut prev = RowSparseMatrix::ones(n);
                    let mut prev_mask = IndexMask::full(n, n);
                    let mut dense_prev = vec![vec![1.0; n]; n];
                    let mut dense_mask = vec![vec![true; n]; n];
                    for (l, &k) in budgets.iter().enumerate() {
                        let layer = l + 1;
                        let (q, kk, v) = (
                            draw(n, d, seed, l, 0),
                            draw(n, d, seed, l, 1),
                            draw(n, d, seed, l, 2),
                        );
                        let (dq, dk, dv) = (
                            oracle::to_nested(&q),
                            oracle::to_nested(&kk),
                            oracle::to_nested(&v),
                        );
                        let inputs = AttentionInputs::new(q, kk, v)?;
                        let mut step = pfa_step(&inputs, &prev, &prev_mask, k, renorm)?;
                        if let Some(f) = fault.filter(|f| f.seed == seed && f.layer == layer) {
                            let offset: usize = (0..f.row.min(n - 1))
                                .map(|i| step.attention.row_nnz(i))
                                .sum();
                            step.attention.values_mut()[offset] += FAULT_SIZE;
                        }
                        let (a, m, o) = oracle::dense_pfa_step(
                            &dq,
                            &dk,
                            &dv,
                            &dense_prev,
                            &dense_mask,
                            k,
                            renorm,
                        );
                        let at = |what: &'static str| {
                            move |i: usize, j: usize| {
                                format!("seed {seed} N {n} d {d} schedule {name} renorm {renorm} layer {layer} {what} row {i} col {j}")
                            }
                        };
                        for i in 0..n {
                            let (cols, vals) = step.attention.row(i);
                            if step.mask.row(i) != cols {
                                diff.fail(|| format!("{} mask and map disagree", at("mask")(i, 0)));
                            }
                            let mut next = 0;
                            for j in 0..n {
                                let stored = cols.get(next) == Some(&(j as u32));
                                if stored != m[i][j] {
                                    diff.fail(|| format!("{} support differs", at("mask")(i, j)));
                                }
                                let got = if stored {
                                    next += 1;
                                    vals[next - 1]
                                } else {
                                    0.0
                                };
                                diff.record(got, a[i][j], || at("attention")(i, j));
                            }
                        }
                        compare_dense(&mut diff, &step.output, &o, &at("output"));
                        prev = step.attention;
                        prev_mask = step.mask;
                        dense_prev = a;
                        dense_mask = m;
                    }
                }
            }
        }
    }
    Ok(Check::from_diff("oracle", "pfa-chain", cases, diff))
}

/// Masked score and aggregation kernels against dense products.
pub fn kernel_differential(seeds: &[u64]) -> Result<Check> {
    let mut diff = Diff::new(ORACLE_TOLERANCE);
    let mut cases = 0;
    for &seed in seeds {
        for n in [16, 64] {
            for d in [2, 8, 16] {
                for keep in [n, n / 4, 1] {
                    cases += 1;
                    let (q, k, v) = (
                        draw(n, d, seed, 0, 3),
                        draw(n, d, seed, 0, 4),
                        draw(n, d, seed, 0, 5),
                    );
                    let mask = IndexMask::random(n, n, keep, seed ^ n as u64);
                    let (scores, macs) = smm_scores(&q, &k, &mask)?;
                    let (dq, dk, dv) = (
                        oracle::to_nested(&q),
                        oracle::to_nested(&k),
                        oracle::to_nested(&v),
                    );
                    let at = |what: &'static str| {
                        move |i: usize, j: usize| {
                            format!("seed {seed} N {n} d {d} keep {keep} {what} row {i} col {j}")
                        }
                    };
                    if macs != (n * keep * d) as u64 {
                        diff.fail(|| {
                            format!("seed {seed} N {n} d {d} keep {keep}: {macs} score MACs")
                        });
                    }
                    for i in 0..n {
                        for &j in mask.row(i) {
                            let j = j as usize;
                            let want: f64 = (0..d).map(|p| dq[i][p] * dk[j][p]).sum();
                            match scores.get(i, j) {
                                Some(got) => diff.record(got, want, || at("score")(i, j)),
                                None => diff.fail(|| format!("{} missing", at("score")(i, j))),
                            }
                        }
                    }
                    let (out, _) = smm_aggregate(&scores, &v, &mask)?;
                    let dense_a: Dense = (0..n)
                        .map(|i| (0..n).map(|j| scores.get(i, j).unwrap_or(0.0)).collect())
                        .collect();
                    compare_dense(
                        &mut diff,
                        &out,
                        &oracle::matmul(&dense_a, &dv),
                        &at("aggregate"),
                    );
                }
            }
        }
    }
    Ok(Check::from_diff("kernels", "masked-products", cases, diff))
}

/// Full cascade against the dense replay.
pub fn cascade_differential(
    preset: &ModelPreset,
    weights: &LayerWeights,
    input: &FeatureMap,
    variant: Variant,
    renorm: bool,
    threads: usize,
) -> Result<Check> {
    let mut opts = CascadeOptions::new(variant);
    opts.renormalize_after_topk = renorm;
    opts.threads = threads;
    let (out, _) = run_cascade(preset, weights, input, &opts)?;
    let want = oracle::dense_cascade(preset, weights, input, variant, renorm);
    let mut diff = Diff::new(1e-9);
    let (w, c) = (input.width(), input.channels());
    for (idx, (&g, &e)) in out.values().iter().zip(&want).enumerate() {
        diff.record(g, e, || {
            let p = idx / c;
            format!("pixel ({}, {}) channel {}", p / w, p % w, idx % c)
        });
    }
    Ok(Check::from_diff(
        "oracle",
        format!("cascade-{variant}"),
        1,
        diff,
    ))
}

/// Support nesting, row occupancy and row sums along each parity chain of a
/// trace recorded with maps.
pub fn chain_invariants(trace: &CascadeTrace) -> Check {
    let n = trace.tokens;
    let heads = trace.heads;
    let mut diff = Diff::new(ROW_SUM_TOLERANCE);
    let mut parents: [Option<&Vec<RowSparseMatrix>>; 2] = [None, None];
    let mut rows = 0;
    for lt in &trace.layers {
        let maps = match &lt.maps {
            Some(m) => m,
            None => {
                diff.fail(|| format!("layer {} has no recorded maps", lt.layer));
                break;
            }
        };
        let slot = match lt.parity {
            Parity::Odd => 0,
            Parity::Even => 1,
        };
        let chained = matches!(trace.variant, Variant::Pfa | Variant::Progressive);
        for (cell, a) in maps.iter().enumerate() {
            let (win, head) = (cell / heads, cell % heads);
            let parent = parents[slot].filter(|_| chained).map(|p| &p[cell]);
            for i in 0..a.rows() {
                rows += 1;
                let at = |what: &str| {
                    format!(
                        "layer {} window {win} head {head} row {i}: {what}",
                        lt.layer
                    )
                };
                let (cols, vals) = a.row(i);
                let parent_nnz = parent.map_or(n, |p| p.row_nnz(i));
                let expected = match trace.variant {
                    Variant::Vanilla | Variant::Progressive => n,
                    Variant::TopK => lt.budget.min(n),
                    Variant::Pfa => lt.budget.min(parent_nnz),
                };
                if cols.len() != expected {
                    diff.fail(|| at(&format!("{} entries, expected {expected}", cols.len())));
                }
                if let Some(p) = parent {
                    if let Some(&j) = cols.iter().find(|&&j| p.get(i, j as usize).is_none()) {
                        diff.fail(|| at(&format!("column {j} outside the parent support")));
                    }
                }
                if vals.iter().any(|&v| !(v > 0.0)) {
                    diff.fail(|| at("non-positive stored weight"));
                }
                let sum: f64 = vals.iter().sum();
                let truncated = trace.variant == Variant::Pfa && expected < parent_nnz;
                if truncated && !trace.renormalize_after_topk {
                    if sum > 1.0 + ROW_SUM_TOLERANCE {
                        diff.fail(|| at(&format!("kept mass {sum} exceeds one")));
                    }
                } else {
                    diff.record(sum, 1.0, || at("row sum"));
                }
            }
        }
        parents[slot] = Some(maps);
    }
    Check::from_diff("invariants", format!("chain-{}", trace.variant), rows, diff)
}

/// Runs every suite for `cfg`.
pub fn verify(cfg: &RunConfig, chain_seeds: usize) -> Result<VerifyReport> {
    let (preset, weights, input) = prepare(cfg)?;
    let threads = cfg.resolved_threads();
    let mut report = VerifyReport::default();
    let base = cfg.seed;

    report
        .checks
        .push(kernel_differential(&[base, base + 1, base + 2])?);
    let fault = cfg.inject_fault.then_some(Fault {
        seed: base,
        layer: 2,
        row: 3,
    });
    report.checks.push(chain_differential(
        &ChainSuite::new(base..base + chain_seeds as u64),
        fault,
    )?);
    report.checks.push(cascade_differential(
        &preset,
        &weights,
        &input,
        cfg.variant,
        cfg.renorm_topk,
        threads,
    )?);

    let mut opts = CascadeOptions::new(cfg.variant);
    opts.renormalize_after_topk = cfg.renorm_topk;
    opts.record_maps = true;
    opts.threads = 1;
    let (single_out, single) = run_cascade(&preset, &weights, &input, &opts)?;
    report.checks.push(chain_invariants(&single));

    let cost = cost_input(cfg, &preset, &input);
    let macs = reconcile(&single, &cost)?;
    let bad = macs.layers.iter().find(|l| !l.matches()).map(|l| {
        format!(
            "layer {}: score {} vs {} aggregate {} vs {} projection {} vs {}",
            l.layer,
            l.measured_score_macs,
            l.analytic_score_macs,
            l.measured_aggregate_macs,
            l.analytic_aggregate_macs,
            l.measured_projection_macs,
            l.analytic_projection_macs
        )
    });
    report.checks.push(Check::boolean(
        "counters",
        "reconcile",
        macs.layers.len(),
        bad,
    ));

    opts.threads = threads;
    let (multi_out, multi) = run_cascade(&preset, &weights, &input, &opts)?;
    let mismatch = single_out
        .values()
        .iter()
        .zip(multi_out.values())
        .position(|(a, b)| a.to_bits() != b.to_bits())
        .map(|i| format!("output value {i} differs between 1 and {threads} threads"))
        .or_else(|| {
            (single != multi).then(|| format!("trace differs between 1 and {threads} threads"))
        });
    report.checks.push(Check::boolean(
        "determinism",
        format!("threads-1-vs-{threads}"),
        single_out.values().len(),
        mismatch,
    ));

    let side = 2 * preset.window;
    let corner = crop(&input, side.min(input.height()), side.min(input.width()))?;
    report
        .checks
        .extend(degenerate_checks(&preset, &weights, &corner, threads)?);
    Ok(report)
}

/// Top-left `h × w` corner of `f`.
pub fn crop(f: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
    let c = f.channels();
    let values = (0..h)
        .flat_map(|y| (0..w).flat_map(move |x| f.pixel(y, x).iter().copied()))
        .take(h * w * c)
        .collect();
    Ok(FeatureMap::new(h, w, c, values)?)
}

fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.max_abs_diff(b)
}

/// Identities that hold when every budget equals the window size.
pub fn degenerate_checks(
    preset: &ModelPreset,
    weights: &LayerWeights,
    input: &FeatureMap,
    threads: usize,
) -> Result<Vec<Check>> {
    let n = preset.tokens();
    let mut full = preset.clone();
    full.focus = FocusSchedule::PerBlock(vec![n; preset.blocks.len()]);
    let run = |p: &ModelPreset, w: &LayerWeights, v: Variant, renorm: bool| {
        let mut o = CascadeOptions::new(v);
        o.renormalize_after_topk = renorm;
        o.threads = threads;
        run_cascade(p, w, input, &o).map(|(f, _)| f)
    };
    let mut checks = Vec::new();
    let value = |suite, name: &str, d: f64, status| Check {
        suite,
        name: name.to_string(),
        cases: 1,
        max_diff: d,
        tolerance: ORACLE_TOLERANCE,
        status,
        detail: String::new(),
    };
    let pass_if = |d: f64| {
        if d <= ORACLE_TOLERANCE {
            Status::Pass
        } else {
            Status::Fail
        }
    };

    // One layer of each parity: both chains are still at their all-ones start.
    let mut head = full.clone();
    head.blocks = vec![2.min(full.total_layers())];
    head.focus = FocusSchedule::PerBlock(vec![n]);
    let head_weights = LayerWeights::from_layers(weights.layers()[..head.blocks[0]].to_vec());
    let d = max_abs_diff(
        &run(&head, &head_weights, Variant::Pfa, false)?,
        &run(&head, &head_weights, Variant::Vanilla, false)?,
    );
    checks.push(value(
        "degenerate",
        "pfa≡vanilla(first-layer-per-parity)",
        d,
        pass_if(d),
    ));

    let pfa = run(&full, weights, Variant::Pfa, false)?;
    let d = max_abs_diff(&pfa, &run(&full, weights, Variant::Progressive, false)?);
    checks.push(value("degenerate", "pfa(K=N)≡progressive", d, pass_if(d)));

    let d = max_abs_diff(&pfa, &run(&full, weights, Variant::Pfa, true)?);
    checks.push(value(
        "degenerate",
        "pfa(K=N)-renorm-independent",
        d,
        if d == 0.0 { Status::Pass } else { Status::Fail },
    ));

    let d = max_abs_diff(&pfa, &run(&full, weights, Variant::Vanilla, false)?);
    let mut info = value(
        "degenerate",
        "pfa(K=N)-vs-vanilla(full-cascade)",
        d,
        Status::Info,
    );
    info.detail = "inherited maps keep multiplying in after the first layer of each parity".into();
    checks.push(info);
    Ok(checks)
}
