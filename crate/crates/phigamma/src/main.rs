//! Command-line front end for the deterministic check harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phigamma::harness::{
    emit_report, explain, run_suite, ReportFormat, RunConfig, CHECKS, SUITES,
};

#[derive(Parser)]
#[command(
    name = "phigamma",
    about = "Exact p-adic checks for rank-2 (phi, Gamma)-module computations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected check suite and emit a report.
    Run {
        /// Flat key-value configuration file ('#' comments).
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Suite override: all, series, mahler, wach, gl2, correspondence.
        #[arg(long)]
        suite: Option<String>,
        /// Output format.
        #[arg(long, default_value = "json")]
        format: ReportFormatArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration (all keys and defaults).
    ShowConfig,
    /// Print the identity a check certifies and how it is checked.
    Explain {
        /// Check name; see `show-config` output or the report records.
        name: String,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ReportFormatArg {
    Json,
    Text,
}

impl From<ReportFormatArg> for ReportFormat {
    fn from(a: ReportFormatArg) -> ReportFormat {
        match a {
            ReportFormatArg::Json => ReportFormat::Json,
            ReportFormatArg::Text => ReportFormat::Text,
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, suite, format, out } => {
            let mut cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    RunConfig::parse(&text)?
                }
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = suite {
                cfg.suite = s;
            }
            let report = run_suite(&cfg)?;
            let rendered = emit_report(&report, format.into());
            match out {
                Some(path) => std::fs::write(&path, rendered)
                    .map_err(|e| format!("{}: {e}", path.display()))?,
                None => print!("{rendered}"),
            }
            Ok(if report.failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::ShowConfig => {
            print!("{}", RunConfig::default().to_text());
            println!("# suites: {}", SUITES.join(", "));
            println!("# checks: {}", CHECKS.map(|(n, _, _, _)| n).join(", "));
            Ok(ExitCode::SUCCESS)
        }
        Command::Explain { name } => match explain(&name) {
            Some((anchor, formula)) => {
                println!("{name}");
                println!("  identity: {anchor}");
                println!("  method:   {formula}");
                Ok(ExitCode::SUCCESS)
            }
            None => Err(format!(
                "unknown check {name}; known checks: {}",
                CHECKS.map(|(n, _, _, _)| n).join(", ")
            )),
        },
    }
}
