use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quantswitch_cli::{load_config, parse_config, run, CliError, RunOptions, Stage, Verb, EXIT_STAGE_ERROR, REFERENCE_CONFIG, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "quantswitch", version, about = "Stability certificates and simulations for quantized switched systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized synthesis and write the certificate.
    Synthesize(ConfigArgs),
    /// Evaluate the bound chain and dwell-time quantities.
    Bounds(ConfigArgs),
    /// Full pipeline including the simulation campaign.
    Simulate(ConfigArgs),
    /// Run the bundled two-mode reference example end to end.
    #[command(name = "reproduce-sec5")]
    Reproduce(CommonArgs),
    /// Worst-case mismatch signals from the [adversarial] section.
    Adversarial(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Overrides the synthesis seed and the first campaign seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Relative tolerance for the reference kappa.
    #[arg(long)]
    kappa_tol: Option<f64>,
    /// Relative tolerance for the reference growth rate D.
    #[arg(long)]
    d_tol: Option<f64>,
}

impl CommonArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            out_dir: self.out.clone(),
            kappa_rel_tol: self.kappa_tol,
            d_rel_tol: self.d_tol,
        }
    }
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::new(Stage::Config, format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(Stage::Config, e.to_string()))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    configure_workers()?;
    let (verb, args, loaded) = match &cli.command {
        Command::Synthesize(a) => (Verb::Synthesize, &a.common, Some(&a.config)),
        Command::Bounds(a) => (Verb::Bounds, &a.common, Some(&a.config)),
        Command::Simulate(a) => (Verb::Simulate, &a.common, Some(&a.config)),
        Command::Adversarial(a) => (Verb::Adversarial, &a.common, Some(&a.config)),
        Command::Reproduce(a) => (Verb::Simulate, a, None),
    };
    let (config, base) = match loaded {
        Some(path) => load_config(path)?,
        None => (parse_config(REFERENCE_CONFIG)?, Path::new(".").to_path_buf()),
    };
    let outcome = run(&config, &base, verb, &args.options())?;
    print!("{}", outcome.report.summary());
    println!("outputs written to {}", outcome.out_dir.display());
    Ok(outcome.code)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::from(EXIT_STAGE_ERROR as u8)
        }
    }
}
