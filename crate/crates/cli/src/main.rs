mod commands;
mod job;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chipwave::Error;

#[derive(Parser)]
#[command(
    name = "chipwave",
    version,
    about = "Field simulation and beamforming for antenna arrays in flip-chip packages"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Common {
    /// Scenario file (JSON) or preset name
    #[arg(long, global = true, default_value = "flipchip-60ghz")]
    scenario: String,
    /// Override the operating frequency (GHz)
    #[arg(long, global = true)]
    freq: Option<f64>,
    /// Override lateral cells per wavelength
    #[arg(long, global = true)]
    cells_per_lambda: Option<f64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Field-library cache (default: <out>/cache)
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-port solves
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Treat runs that stop at the step limit as errors
    #[arg(long, global = true)]
    strict: bool,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// S11 spectrum and resonance of one port
    Resonance(commands::ResonanceArgs),
    /// Coupling between two elements versus spacing
    Coupling(commands::CouplingArgs),
    /// Combined field of a phase profile on the antenna plane
    Fields(commands::FieldsArgs),
    /// Interference and SIR maps with a per-channel isolation verdict
    Sir(commands::SirArgs),
    /// Lattice search for phase profiles
    Search(commands::SearchArgs),
}

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    Unconverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Unconverged(_) => 4,
            Failure::Core(Error::Divergence { .. }) => 3,
            Failure::Core(Error::Io(_) | Error::Resource(_)) => 1,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Unconverged(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Resonance(a) => commands::resonance(&cli.common, a),
        Command::Coupling(a) => commands::coupling(&cli.common, a),
        Command::Fields(a) => commands::fields(&cli.common, a),
        Command::Sir(a) => commands::sir(&cli.common, a),
        Command::Search(a) => commands::search(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::Usage("x".into()).exit_code(), 2);
        assert_eq!(Failure::Core(Error::Validation("x".into())).exit_code(), 2);
        assert_eq!(
            Failure::Core(Error::Bandwidth {
                freq_ghz: 5.0,
                lo_ghz: 40.0,
                hi_ghz: 130.0
            })
            .exit_code(),
            2
        );
        assert_eq!(
            Failure::Core(Error::Divergence {
                step: 10,
                reason: "x".into()
            })
            .exit_code(),
            3
        );
        assert_eq!(Failure::Unconverged("x".into()).exit_code(), 4);
    }
}
