//! Command-line driver: synthetic data generation, model fitting,
//! evaluation against ground truth, sampler validation, Monte-Carlo
//! benchmarks, and image-patch sparse coding.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "boca",
    about = "Bayesian orthogonal component analysis: sparse source separation on orthonormal dictionaries",
    version
)]
struct Cli {
    /// JSON config with model fields {M, N, T, nu, alpha0, alpha1} and
    /// sampler settings {n_mc, n_bi, seed}; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for parallel benchmark trials.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (X, S, Q, Psi, manifest).
    Generate(GenerateArgs),
    /// Fit the model to an observation matrix and write all estimates.
    Fit(FitArgs),
    /// Score estimates against ground truth after dictionary alignment.
    Evaluate(EvaluateArgs),
    /// Run the sampler-correctness suites.
    Validate(ValidateArgs),
    /// Monte-Carlo benchmark over a grid of source counts and SNRs.
    Bench(BenchArgs),
    /// Sparse-code an image by non-overlapping patches.
    Patches(PatchesArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Toy configuration: two sinusoidal atoms, M=50, T=100.
    #[arg(long, conflicts_with = "bench")]
    toy: bool,
    /// Benchmark configuration: random orthogonal atoms, M=128, T=256.
    #[arg(long)]
    bench: bool,
    /// Number of sources (benchmark config).
    #[arg(long, short = 'n')]
    n: Option<usize>,
    /// Target SNR in dB (benchmark config; toy default 15).
    #[arg(long)]
    snr: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Observation matrix CSV (M×T, no header).
    #[arg(long)]
    input: PathBuf,
    /// Number of sources/atoms.
    #[arg(long, short = 'n')]
    n: Option<usize>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    n_bi: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding s_map.csv and psi_map.csv.
    #[arg(long)]
    estimates: PathBuf,
    /// Directory holding S_true.csv, Q_true.csv, Psi_true.csv.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Oracle equivalence and moderate-count moment checks only.
    #[arg(long, conflicts_with = "full")]
    quick: bool,
    /// Full-count moments plus the joint-distribution and
    /// fault-injection tests.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Source counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
    n_list: Vec<usize>,
    /// SNR grid in dB, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20")]
    snr_list: Vec<f64>,
    /// Trials per grid cell.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    n_bi: Option<usize>,
}

#[derive(Args)]
struct PatchesArgs {
    /// Input image: binary 8-bit PGM (P5), dimensions divisible by 16.
    #[arg(long)]
    image: PathBuf,
    /// Number of dictionary atoms (must stay below the patch dimension).
    #[arg(long, short = 'n', default_value_t = 16)]
    n: usize,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    n_bi: Option<usize>,
    /// Remove each patch mean before fitting and restore it afterwards.
    #[arg(long)]
    center_patches: bool,
}

fn classify(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<boca::Error>() {
        match e {
            boca::Error::Config(_) | boca::Error::Domain(_) | boca::Error::Dimension(_) => {
                EXIT_CONFIG
            }
            boca::Error::Io(_) | boca::Error::Parse(_) => EXIT_IO,
            boca::Error::Degenerate(_) => EXIT_VALIDATION,
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        EXIT_IO
    } else if let Some(&code) = err.downcast_ref::<commands::ExitWith>() {
        code.0
    } else {
        EXIT_CONFIG
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    let ctx = commands::Context {
        config_path: cli.config,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };

    let result = match cli.command {
        Command::Generate(args) => commands::generate(&ctx, args.toy, args.bench, args.n, args.snr),
        Command::Fit(args) => commands::fit(&ctx, &args.input, args.n, args.n_mc, args.n_bi),
        Command::Evaluate(args) => commands::evaluate(&ctx, &args.estimates, &args.truth),
        Command::Validate(args) => commands::validate(&ctx, args.full && !args.quick),
        Command::Bench(args) => commands::bench(
            &ctx,
            &args.n_list,
            &args.snr_list,
            args.trials,
            args.n_mc,
            args.n_bi,
        ),
        Command::Patches(args) => commands::patches(
            &ctx,
            &args.image,
            args.n,
            args.n_mc,
            args.n_bi,
            args.center_patches,
        ),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
