//! `platewave` command-line front end.

mod manifest;
mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for a configuration or usage error.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for a failure while simulating or training.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "platewave", version, about = "Solid-channel ultrasonic injection simulator and perturbation defense trainer")]
struct Cli {
    /// Worker threads for sweeps and training (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run attacks on the scenario's channel and any configured sweeps.
    SimulateAttack(Common),
    /// Locate an impact from six mono WAV recordings.
    Locate {
        /// Directory holding mic0.wav .. mic5.wav.
        #[arg(long)]
        recordings: PathBuf,
        /// Scenario file with an [array] section.
        #[arg(long, alias = "scenario")]
        geometry: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Train the word recognizer and save it as text.
    TrainRecognizer(Common),
    /// Train a universal perturbation against the scenario's recognizer.
    TrainUap(Common),
    /// Evaluate a perturbation on held-out commands, shifts and carriers.
    EvalDefense {
        #[command(flatten)]
        common: Common,
        /// Perturbation in the numeric text format.
        #[arg(long)]
        perturbation: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::SimulateAttack(c) => run::simulate_attack(&c),
        Command::Locate {
            recordings,
            geometry,
            out,
            format: _,
        } => run::locate(&recordings, &geometry, &out),
        Command::TrainRecognizer(c) => run::train_recognizer(&c),
        Command::TrainUap(c) => run::train_uap(&c),
        Command::EvalDefense { common, perturbation } => run::eval_defense(&common, &perturbation),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
