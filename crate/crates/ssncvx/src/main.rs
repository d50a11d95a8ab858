use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ssncvx::io::{self, ProblemSource, RunManifest};
use ssncvx::presets::PresetOptions;
use ssncvx::SolverConfig;

#[derive(Parser)]
#[command(name = "ssncvx", version, about = "Semismooth Newton solver for composite convex programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a JSON problem file or a generated preset
    Solve(SolveArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// JSON problem file
    #[arg(value_name = "FILE", required_unless_present = "preset", conflicts_with = "preset")]
    file: Option<PathBuf>,
    /// Generate a named test problem (lasso, fused-lasso, qp-portfolio, socp, spca, lrmc)
    #[arg(long, value_name = "NAME", requires = "seed")]
    preset: Option<String>,
    /// RNG seed for the preset (mandatory with --preset)
    #[arg(long, value_name = "N", requires = "preset")]
    seed: Option<u64>,
    /// Preset size override: vector length, or matrix side for spca/lrmc
    #[arg(long, value_name = "N", requires = "preset")]
    n: Option<usize>,
    /// Preset row-count override
    #[arg(long, value_name = "N", requires = "preset")]
    m: Option<usize>,
    /// KKT tolerance
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
    /// Outer iteration cap
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,
    /// Wall-clock limit in seconds
    #[arg(long, value_name = "S")]
    time_limit: Option<f64>,
    /// Initial proximal penalty
    #[arg(long, value_name = "X")]
    sigma0: Option<f64>,
    /// Write the JSON solve report here
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Write the JSON iteration trace here
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Print one log line per iteration
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn manifest_from(args: SolveArgs) -> RunManifest {
    let mut config = SolverConfig::default();
    if let Some(t) = args.tol {
        config.tol = t;
    }
    if let Some(k) = args.max_iter {
        config.max_iter = k;
    }
    if args.time_limit.is_some() {
        config.time_limit = args.time_limit;
    }
    if let Some(s) = args.sigma0 {
        config.sigma0 = s;
    }
    let source = match args.preset {
        Some(name) => ProblemSource::Preset {
            name,
            seed: args.seed.expect("clap `requires` invariant"),
            opts: PresetOptions::sized(args.n, args.m),
        },
        None => ProblemSource::File(args.file.expect("clap `required_unless_present` invariant")),
    };
    RunManifest {
        source,
        config,
        report_path: args.report,
        trace_path: args.trace,
        verbosity: args.verbose,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(io::EXIT_INPUT_ERROR as u8);
        }
    };
    match cli.command {
        Command::Solve(args) => ExitCode::from(io::run(&manifest_from(args)) as u8),
    }
}
