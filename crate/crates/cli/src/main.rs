use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nqk::commands::{error_exit_code, run, Command};
use nqk::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "nqk", version, about = "Noisy quantum kernel machine experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Load, split, project and normalize the dataset.
    Preprocess,
    /// Encode every input for each (disorder seed, gamma) cell.
    Encode,
    /// Train and evaluate over the regularization grid.
    TrainEval,
    /// Kernel spectrum, effective rank, alignment and bound.
    KernelReport,
    /// Entropy and negativity during encoding.
    Diagnostics,
    /// Encode, train-eval, kernel-report and diagnostics.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Preprocess => Command::Preprocess,
            Cmd::Encode => Command::Encode,
            Cmd::TrainEval => Command::TrainEval,
            Cmd::KernelReport => Command::KernelReport,
            Cmd::Diagnostics => Command::Diagnostics,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(error_exit_code(&e) as u8);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let out = cfg.output_dir.clone();
    match run(cli.command.into(), &cfg, &out, true) {
        Ok(summary) => {
            for (msg, _) in &summary.failures {
                eprintln!("failed {msg}");
            }
            eprintln!("wrote {} files under {}", summary.artifacts.len(), out.display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e) as u8)
        }
    }
}
