use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vnfplace_cli::{cmd_compare, cmd_generate, cmd_optimize, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "vnfplace", version, about = "Train and tune delay-aware VNF placement trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "configs/desk.json")]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate topologies, label them with the teacher and write the dataset.
    #[command(alias = "teach")]
    Generate,
    /// Run the three-stage depth search and fit the DAT and DO-DAT models.
    #[command(alias = "train")]
    Optimize,
    /// Compare teacher, DAT and DO-DAT on the held-out topologies.
    #[command(alias = "evaluate")]
    Compare,
    /// generate, optimize and compare in sequence.
    Run,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::Config(format!("no working directory: {e}")))?;
    let cfg = RunConfig::load(&cli.config)?.resolve(cli.seed, &cwd);
    cfg.validate()?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
    }
    match cli.command {
        Command::Generate => cmd_generate(&cfg).map(drop),
        Command::Optimize => cmd_optimize(&cfg).map(drop),
        Command::Compare => cmd_compare(&cfg).map(drop),
        Command::Run => {
            cmd_generate(&cfg)?;
            cmd_optimize(&cfg)?;
            cmd_compare(&cfg).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
