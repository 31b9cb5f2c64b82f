use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use gamebarrier::cli::{parse_config, run, CliError, Command, Output};

/// Pricing, hedging and shortfall experiments for game barrier options.
#[derive(Debug, Parser)]
#[command(name = "gamebarrier", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(args: &Args) -> Result<Output, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let output = pool.install(|| run(args.command, &cfg))?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        for (name, csv) in &output.tables {
            std::fs::write(dir.join(name), csv)?;
        }
    }
    Ok(output)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(output) => {
            println!("{}", output.json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
