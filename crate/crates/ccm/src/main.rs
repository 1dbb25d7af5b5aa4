use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimo_ccm::harness::{run_sweep, selftest, write_csv_file, ScenarioConfig};

#[derive(Parser)]
#[command(name = "mimo-ccm", about = "Covariance reconstruction experiments for massive MIMO arrays", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON scenario description.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for the trial loop.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single scenario point and write the metrics CSV.
    Run(RunArgs),
    /// Execute the sweep declared in the scenario and write the metrics CSV.
    Sweep(RunArgs),
    /// Run the built-in invariant checks on the default scenario.
    Selftest {
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn load(args: &RunArgs, want_sweep: bool) -> Result<ScenarioConfig, String> {
    let mut cfg = ScenarioConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if want_sweep && cfg.sweep.is_none() {
        return Err("sweep subcommand needs a \"sweep\" section in the config".into());
    }
    if !want_sweep {
        cfg.sweep = None;
    }
    Ok(cfg)
}

fn execute(args: &RunArgs, want_sweep: bool) -> Result<(), String> {
    let cfg = load(args, want_sweep)?;
    let records = run_sweep(&cfg, args.workers).map_err(|e| e.to_string())?;
    write_csv_file(&records, &args.out).map_err(|e| e.to_string())?;
    eprintln!(
        "wrote {} records ({} trials each) to {}",
        records.len(),
        cfg.trials,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => execute(args, false),
        Command::Sweep(args) => execute(args, true),
        Command::Selftest { workers } => {
            selftest(*workers).map_err(|e| e.to_string()).map(|()| {
                eprintln!("selftest passed");
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
