//! `fedstream` command-line entry point.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fedstream", version, about = "Streaming federated threat detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one organization's pipeline over a record file.
    Run {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Records, one per line (JSON-Lines or CSV with a header row).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for report.txt, alerts.jsonl and model.env.
        #[arg(long)]
        out: PathBuf,
        /// Operator feedback queue written by `fedstream feedback`.
        #[arg(long)]
        feedback: Option<PathBuf>,
        /// Start from this envelope instead of a fresh model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run an isolated-versus-federated experiment on synthetic streams.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the synthetic data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Merge envelopes of one model kind into a single envelope.
    Merge {
        /// Envelope files to merge.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Comma-separated trust weights, one per input (default uniform).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        /// Tree selection seed (forest only).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Organization id written into the merged envelope header.
        #[arg(long, default_value = "merged")]
        org: String,
    },
    /// Print an envelope's header and parameter shapes.
    Inspect {
        envelope: PathBuf,
    },
    /// Queue an operator label for a previously seen record.
    Feedback {
        #[arg(long)]
        org: String,
        #[arg(long)]
        record: String,
        #[arg(long)]
        label: String,
        #[arg(long, default_value = "operator")]
        operator: String,
        /// Event timestamp (seconds).
        #[arg(long, default_value_t = 0)]
        ts: i64,
        /// Queue file; defaults to `<org>.feedback.jsonl` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic per-organization record streams.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write hidden ground truth and a labeled held-out stream.
        #[arg(long)]
        with_truth: bool,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, input, out, feedback, model } => {
            commands::cmd_run(&config, &input, &out, feedback.as_deref(), model.as_deref())
        }
        Command::Simulate { config, out, seed } => commands::cmd_simulate(&config, &out, seed),
        Command::Merge { inputs, weights, out, seed, org } => {
            commands::cmd_merge(&inputs, weights.as_deref(), &out, seed, &org)
        }
        Command::Inspect { envelope } => commands::cmd_inspect(&envelope),
        Command::Feedback { org, record, label, operator, ts, out } => {
            commands::cmd_feedback(&org, &record, &label, &operator, ts, out.as_deref())
        }
        Command::GenData { config, out, seed, with_truth } => commands::cmd_gen_data(&config, &out, seed, with_truth),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDSTREAM_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedstream: {e}");
            ExitCode::from(e.code())
        }
    }
}
