use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use segpf::stages::{Run, Stage};
use segpf::{CliError, ExperimentConfig};

/// Address-segmentation attention prefetcher experiments.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Stage to run.
    #[arg(value_enum)]
    stage: Stage,
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; defaults to `runs/<config hash>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg = cfg.with_seed(s);
    }
    let run = Run::new(cfg, args.run_dir)?;
    let m = run.run(args.stage)?;
    println!(
        "{}: {} files in {}",
        m.stage,
        m.outputs.len(),
        run.dir.join(&m.stage).display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
