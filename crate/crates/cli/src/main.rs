use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gfrls_cli::commands::{self, Outcome, Overrides};
use gfrls_cli::config::{ConfigError, Format};
use gfrls_cli::trace::SchemaError;

/// Exit code for malformed configs, traces or inputs.
const EXIT_INPUT: u8 = 2;
/// Exit code when `--strict` finds a violated check.
const EXIT_STRICT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "gfrls", version, about = "Generalized-forgetting recursive least squares experiments")]
struct Cli {
    /// Exit with status 3 if any requested check is violated.
    #[arg(long, global = true)]
    strict: bool,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Output format for tables.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config and write trajectory, report and plot data.
    Run { config: PathBuf },
    /// Certify persistent excitation of a trace's weighted regressors.
    CertifyPe {
        trace: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Search for the smallest PE window up to this size instead.
        #[arg(long)]
        max_window: Option<usize>,
    },
    /// Evaluate the ultimate bound from constants in a TOML or JSON file.
    Bound { inputs: PathBuf },
    /// Compare the recursive estimate with the batch minimizer.
    Oracle { config: PathBuf },
}

fn is_input_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>()
            || c.is::<SchemaError>()
            || c.is::<toml::de::Error>()
            || c.is::<serde_json::Error>()
            || c.is::<std::io::Error>()
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ov = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        format: cli.format,
    };
    let format = ov.format.unwrap_or_default();
    let result: anyhow::Result<Outcome> = match &cli.command {
        Command::Run { config } => commands::run(config, &ov),
        Command::CertifyPe {
            trace,
            window,
            max_window,
        } => commands::certify_pe(trace, *window, *max_window, format),
        Command::Bound { inputs } => commands::bound(inputs, format),
        Command::Oracle { config } => commands::oracle(config, &ov),
    };
    match result {
        Ok(out) => {
            if let Err(e) = commands::emit(&out) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            for v in &out.violations {
                eprintln!("violation: {v}");
            }
            if cli.strict && !out.violations.is_empty() {
                ExitCode::from(EXIT_STRICT)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_input_error(&e) {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
