use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kcc_cli::bench::{run_bench_with, BenchConfig};
use kcc_cli::run::{run_scan, write_atomic, RunConfig, Selection};
use kcc_cli::{panel_block_spec, panel_to_csv, CliError};
use kcc_core::causality::{Method, PermScheme};
use kcc_core::synth::{generate, generate_null};
use kcc_core::{Execution, KernelSpec, SynthConfig};

#[derive(Parser)]
#[command(
    name = "kcc",
    version,
    about = "Kernel canonical Wiener-Granger causality between blocks of time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test causal links in a CSV dataset and write a network document.
    Scan(ScanArgs),
    /// Repeat generate-and-test on the synthetic benchmark.
    Bench(BenchArgs),
    /// Write the synthetic benchmark system as CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, default_value_t = 4)]
    lags: usize,
    /// cc, kcc or genvar.
    #[arg(long, default_value = "kcc")]
    method: Method,
    #[arg(long, default_value_t = 1.0)]
    kernel_width: f64,
    /// Kernel regularizer ζ.
    #[arg(long, default_value_t = 1e-7)]
    ridge: f64,
    /// Incomplete Cholesky trace tolerance τ.
    #[arg(long, default_value_t = 1e-6)]
    chol_tol: f64,
    /// Regularizer ε of the conditioning projection.
    #[arg(long, default_value_t = 1e-7)]
    z_ridge: f64,
    /// Cap on incomplete Cholesky pivots; 0 removes the cap.
    #[arg(long, default_value_t = 200)]
    max_rank: usize,
    /// 0 disables permutation testing.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    /// iid or circular.
    #[arg(long, default_value = "iid")]
    perm_scheme: PermScheme,
    /// Stop after this many null exceedances.
    #[arg(long)]
    early_stop: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

impl MethodArgs {
    fn kernel(&self) -> KernelSpec {
        KernelSpec {
            width: self.kernel_width,
            ridge: self.ridge,
            chol_tolerance: self.chol_tol,
            z_ridge: self.z_ridge,
            max_rank: (self.max_rank > 0).then_some(self.max_rank),
            ..KernelSpec::recommended()
        }
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    input: PathBuf,
    /// Block definitions, e.g. `A=a1,a2;B=b*`. Default: one block per column.
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long, requires = "source", conflicts_with = "scan_all")]
    target: Option<String>,
    #[arg(long, requires = "target")]
    source: Option<String>,
    /// Comma-separated conditioning blocks. Default: every other block.
    #[arg(long, requires = "target", value_delimiter = ',')]
    condition: Option<Vec<String>>,
    /// Test every ordered block pair (the default without --target).
    #[arg(long)]
    scan_all: bool,
    /// Skip standardization for the linear methods.
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    graph_out: Option<PathBuf>,
    #[arg(long)]
    density_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthShape {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    dims: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    /// Use the matched null system.
    #[arg(long)]
    null: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    bench_replicates: usize,
    #[command(flatten)]
    shape: SynthShape,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    shape: SynthShape,
    #[arg(long, default_value_t = 4)]
    lags: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn synth_config(shape: &SynthShape, lags: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_samples: shape.n,
        lags,
        dims: shape.dims,
        seed,
        noise_scale: shape.noise_scale,
    }
}

fn scan(a: ScanArgs) -> Result<(), CliError> {
    let m = &a.method;
    let selection = match (a.target, a.source) {
        (Some(target), Some(source)) => Selection::Pair {
            target,
            source,
            condition: a.condition,
        },
        _ => Selection::ScanAll,
    };
    let cfg = RunConfig {
        input: a.input,
        blocks: a.blocks,
        selection,
        lags: m.lags,
        method: m.method,
        kernel: m.kernel(),
        permutations: m.permutations,
        perm_scheme: m.perm_scheme,
        early_stop: m.early_stop,
        alpha: m.alpha,
        seed: m.seed,
        standardize: !a.no_standardize,
        out: a.out,
        graph_out: a.graph_out,
        density_out: a.density_out,
        exec: m.exec(),
    };
    let write_stdout = cfg.out.is_none();
    let doc = run_scan(&cfg)?;
    if write_stdout {
        print!("{}", doc.to_json()?);
    } else {
        for e in doc.significant() {
            let r = &e.result;
            println!(
                "{} -> {} lag {}: score {:.6}",
                r.source, r.target, r.k, r.score
            );
        }
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), CliError> {
    let m = &a.method;
    let mut run = RunConfig::new("", m.method);
    run.kernel = m.kernel();
    run.permutations = m.permutations;
    run.perm_scheme = m.perm_scheme;
    run.early_stop = m.early_stop;
    run.alpha = m.alpha;
    run.seed = m.seed;
    run.lags = m.lags;
    run.exec = m.exec();
    run.validate()?;
    let mut cfg = BenchConfig::new(
        synth_config(&a.shape, m.lags, m.seed),
        a.bench_replicates,
        run.test_config(),
    );
    cfg.null = a.shape.null;
    let report = run_bench_with(&cfg, |r, n| eprintln!("replicate {r}/{n}"))?;
    let json = report.to_json()?;
    match &a.out {
        Some(p) => write_atomic(p, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = synth_config(&a.shape, a.lags, a.seed);
    let panel = if a.shape.null {
        generate_null(&cfg, Execution::default())?
    } else {
        generate(&cfg, Execution::default())?
    };
    write_atomic(&a.out, panel_to_csv(&panel).as_bytes())?;
    println!("{}", panel_block_spec(&panel));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scan(a) => scan(a),
        Command::Bench(a) => bench(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
