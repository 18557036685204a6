//! `mda`: run sweeps, verification suites and rate fits from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mda_cli::rates::rates_from_csv;
use mda_cli::{run_sweep, run_verify, write_outputs, CliError, ExperimentConfig, Result, RowFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "mda", version, about = "Mirror descent-ascent experiments over discretized measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Row file format for `run`; report format for `verify`.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,

    /// Worker threads for the sweep.
    #[arg(long, global = true, env = "MDA_THREADS")]
    threads: Option<usize>,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (scheme, seed, N) combination and write result files.
    Run { config: PathBuf },
    /// Run the enabled verification checks; exit 1 if any fails.
    Verify { config: PathBuf },
    /// Fit NI(averaged) against N for one scheme of a result CSV.
    Rates {
        csv: PathBuf,
        #[arg(long)]
        scheme: String,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let result = run_sweep(&cfg, cli.threads)?;
            let format = match cli.format {
                Format::Csv => RowFormat::Csv,
                Format::Json => RowFormat::Json,
            };
            let paths = write_outputs(&cfg, &cfg.output.dir, &result, format)?;
            if !cli.quiet {
                println!("rows={} file={}", result.outcomes.len(), paths.rows.display());
                println!("summary={}", paths.summary.display());
                for (scheme, slope) in &result.summary.worst_slope {
                    println!("scheme={scheme} worst_slope={slope:.6}");
                }
                for f in &result.summary.failures {
                    println!("flagged scheme={} seed={} n_iters={}: {}", f.scheme, f.seed, f.n_iters, f.reason);
                }
            }
            Ok(())
        }
        Command::Verify { config } => {
            let cfg = load(cli, config)?;
            let report = run_verify(&cfg)?;
            let failed = report.failed();
            if !cli.quiet || failed > 0 {
                match cli.format {
                    Format::Json => println!("{}", report.to_json()),
                    Format::Csv if cli.quiet => {
                        for c in report.checks.iter().filter(|c| c.failed()) {
                            println!("{c}");
                        }
                    }
                    Format::Csv => println!("{report}"),
                }
            }
            report.into_result().map(|_| ())
        }
        Command::Rates { csv, scheme } => {
            let table = rates_from_csv(csv, scheme)?;
            println!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
