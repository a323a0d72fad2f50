mod commands;
mod report;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::report::Report;

#[derive(Parser)]
#[command(name = "brp", version, about = "Verification harness for branched rough paths, their bracket extensions and the manifold transfer principle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Scenario JSON; without it the built-in scenario of the subcommand runs.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Bound for defects; overrides the scenario's own tolerance.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub max_degree: Option<u32>,
    /// Dyadic depth of the time grid.
    #[arg(long, global = true)]
    pub grid_depth: Option<u32>,
    /// Seed for the randomised sweeps.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of base letters for alphabet sweeps.
    #[arg(long, global = true)]
    pub letters: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Bialgebra, antipode and duality identities over all forests up to a degree.
    VerifyHopf,
    /// Bracket polynomials, golden expansions and the consistency condition.
    VerifyBracket,
    /// Lift a smooth path and check Chen, shuffle and expected components.
    Lift,
    /// Push a smooth lift through a polynomial map and compare with the composed path.
    Pushforward,
    /// Quasi-shuffle relations of a quasi-geometric driver.
    QuasiCheck,
    /// Transfer symbols of a connection at a point, with their checks.
    TransferSymbols,
    /// Manifold rough integral over an atlas with greedy patching.
    IntegrateManifold,
    /// Quasi-geometric RDE with values in a manifold.
    RdeManifold,
    /// Every acceptance criterion with its pinned bounds.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed input: exit code 2.
    Usage(String),
    /// A computation failed: reported as a failing check.
    Run(String),
}

impl From<brp_core::Error> for CliError {
    fn from(e: brp_core::Error) -> Self {
        use brp_core::Error::*;
        match e {
            Parse { .. } | InvalidInput(_) | UnsupportedLabel(_) | InvalidVertex(_) => CliError::Usage(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let suite = match cli.command {
        Command::VerifyHopf => "verify-hopf",
        Command::VerifyBracket => "verify-bracket",
        Command::Lift => "lift",
        Command::Pushforward => "pushforward",
        Command::QuasiCheck => "quasi-check",
        Command::TransferSymbols => "transfer-symbols",
        Command::IntegrateManifold => "integrate-manifold",
        Command::RdeManifold => "rde-manifold",
        Command::Report => "report",
    };
    let outcome = commands::run(suite, &cli.common);
    let report = match outcome {
        Ok(report) => report,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(CliError::Run(msg)) => Report::new(suite, vec![report::CheckEntry::from_error(suite, suite, &msg)]),
    };
    if let Some(path) = &cli.common.out {
        if let Err(e) = std::fs::write(path, report.to_json()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    match cli.common.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => print!("{}", report.to_text()),
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
