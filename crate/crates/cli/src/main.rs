use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tarm_cli::{exit, run, CliError, Command, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Low-rank recovery from ROIL measurements.
    Recover,
    /// Matrix completion from sampled entries.
    Complete,
    /// State-evolution prediction.
    Se,
    /// Phase-transition sweep.
    Phase,
    /// Oracle step size along the practical trajectory.
    MuTable,
    /// QQ data of the input error of the denoiser.
    Qq,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Recover => Command::Recover,
            Sub::Complete => Command::Complete,
            Sub::Se => Command::Se,
            Sub::Phase => Command::Phase,
            Sub::MuTable => Command::MuTable,
            Sub::Qq => Command::Qq,
        }
    }
}

/// Runs one TARM experiment and writes CSV artifacts plus manifest.json.
#[derive(Debug, Parser)]
#[command(name = "tarm", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// JSON experiment config; omit for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::config(e.to_string().trim_end())),
    };
    let text = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(&CliError::config(format!("cannot read config {}: {e}", path.display()))),
        },
        None => "{}".to_string(),
    };
    let overrides = Overrides {
        seed: args.seed,
        jobs: args.jobs,
    };
    match run(args.command.into(), &text, &args.out, &overrides) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.envelope());
    ExitCode::from(e.code as u8)
}
