use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfa_cli::bench::{self, BenchPlan};
use pfa_cli::{config, flops, formats, run, verify, CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "pfa", version, about = "Progressive focused attention harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Differential, invariant, counter and determinism suites.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Seeds in the chain replay suite.
        #[arg(long, default_value_t = 8)]
        chain_seeds: usize,
    },
    /// Time masked kernels against dense baselines.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = bench::MIN_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = bench::MIN_ITERS)]
        iters: usize,
    },
    /// Run a cascade and export statistics.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Print the closed-form cost tables.
    Flops {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pft, pft_light or desk.
    #[arg(long)]
    preset: Option<String>,
    /// vanilla, topk, progressive or pfa.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Per-block budgets, comma separated.
    #[arg(long = "k-list")]
    k_list: Option<String>,
    /// Layers per block, comma separated.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads, 0 for all cores. Defaults to PFA_THREADS.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    height: Option<String>,
    #[arg(long)]
    width: Option<String>,
    /// Raw PFT1 tensor to use instead of the synthetic map.
    #[arg(long)]
    input: Option<String>,
    /// window,head,row of the query row to export as PGM per layer.
    #[arg(long = "export-row")]
    export_row: Option<String>,
    /// Rescale rows that lost entries to top-k.
    #[arg(long = "renorm-topk")]
    renorm_topk: bool,
    /// Perturb one sparse weight by 1e-6 to test the verifier.
    #[arg(long = "inject-fault")]
    inject_fault: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut o: BTreeMap<&'static str, String> = BTreeMap::new();
        let pairs: [(&'static str, &Option<String>); 15] = [
            ("preset", &self.preset),
            ("variant", &self.variant),
            ("window", &self.window),
            ("alpha", &self.alpha),
            ("k-list", &self.k_list),
            ("blocks", &self.blocks),
            ("heads", &self.heads),
            ("channels", &self.channels),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("out", &self.out),
            ("height", &self.height),
            ("width", &self.width),
            ("input", &self.input),
            ("export-row", &self.export_row),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                o.insert(k, v.clone());
            }
        }
        if self.renorm_topk {
            o.insert("renorm-topk", "true".into());
        }
        if self.inject_fault {
            o.insert("inject-fault", "true".into());
        }
        let env = std::env::var("PFA_THREADS").ok();
        config::build(self.config.as_deref(), env.as_deref(), &o)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify {
            common,
            chain_seeds,
        } => {
            let cfg = common.resolve()?;
            let report = verify::verify(&cfg, chain_seeds)?;
            print!("{}", report.to_text());
            run::write_files(
                &cfg.out,
                &[("verify.csv".into(), report.to_csv().into_bytes())],
            )?;
            if !report.passed() {
                let names: Vec<_> = report
                    .failures()
                    .map(|c| format!("{}/{}", c.suite, c.name))
                    .collect();
                return Err(CliError::Verification(names.join(", ")));
            }
        }
        Command::Bench {
            common,
            warmup,
            iters,
        } => {
            let cfg = common.resolve()?;
            let plan = BenchPlan {
                warmup,
                iters,
                seed: cfg.seed,
                ..BenchPlan::default()
            };
            let rows = bench::run(&plan)?;
            let csv = formats::bench_csv(&rows);
            print!("{csv}");
            run::write_files(&cfg.out, &[("bench.csv".into(), csv.into_bytes())])?;
        }
        Command::Run { common } => {
            let cfg = common.resolve()?;
            let outputs = run::run(&cfg)?;
            for path in outputs.write_to(&cfg.out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Flops { common } => {
            let cfg = common.resolve()?;
            let report = flops::flops(&cfg)?;
            print!("{}", report.text);
            run::write_files(&cfg.out, &[("flops.csv".into(), report.csv.into_bytes())])?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pfa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
