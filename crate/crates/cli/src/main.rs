//! `epiwatch` command-line entry point.
//!
//! Reports go to stdout as JSON; failures go to stderr as
//! `{"error": {"kind", "message"}}`. Exit codes: 0 ok, 1 runtime, 2 usage or config.

mod commands;
mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use epiwatch_core::config::ExtractorKind;

#[derive(Parser, Debug)]
#[command(name = "epiwatch", version, about = "Disease surveillance over news metadata")]
struct Cli {
    /// Config file (TOML). Environment variables EPIWATCH_<SECTION>__<KEY> override it.
    #[arg(long, global = true, default_value = "epiwatch.toml")]
    config: PathBuf,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch and filter articles from a source into the store.
    Ingest(IngestArgs),
    /// Classify, translate, gate, extract and map one day's articles.
    Process {
        #[arg(long)]
        date: NaiveDate,
        #[arg(long, value_parser = parse_extractor)]
        extractor: Option<ExtractorKind>,
    },
    /// Cluster one day's mapped events, replacing the day's clusters.
    Cluster {
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Grid-search rule thresholds against labeled clusters.
    TuneRules {
        /// Labeled NDJSON: one `{day, label, text, event}` per line.
        #[arg(long)]
        gold: PathBuf,
        /// Candidate thresholds, whitespace or comma separated.
        #[arg(long)]
        grid: PathBuf,
        /// Starting ladder; defaults to the configured rules.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Write the tuned ladder here as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score extraction or clustering against gold data.
    #[command(subcommand)]
    Evaluate(Evaluate),
    /// Manage disease synonyms proposed during mapping.
    #[command(subcommand)]
    Synonyms(Synonyms),
    /// Start the review API.
    Serve,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// NDJSON URL list, adapter definition (.toml/.json) or feed URL.
    #[arg(long)]
    source: String,
    /// Overrides the configured blocklist.
    #[arg(long)]
    blocklist: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Evaluate {
    /// Event, disease and location P/R/F1, exact match and detection rate.
    Extraction {
        /// NDJSON of `{article_id, relevant, events}`.
        #[arg(long)]
        gold: PathBuf,
        /// NDJSON of `{article_id, events}`; defaults to the store's raw events.
        #[arg(long)]
        predicted: Option<PathBuf>,
    },
    /// ARI, NMI and V-measure per day of a labeled file.
    Clustering {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum Synonyms {
    /// List pending proposals.
    Pending,
    /// Move a pending surface form into the active table.
    Promote { surface: String },
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    s.parse()
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(String),
    Runtime { kind: &'static str, message: String },
}

impl Failure {
    pub fn runtime(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Runtime {
            kind,
            message: e.to_string(),
        }
    }

    fn report(&self) -> ExitCode {
        let (kind, message, code) = match self {
            Failure::Usage(m) => ("usage", m.as_str(), 2),
            Failure::Config(m) => ("config", m.as_str(), 2),
            Failure::Runtime { kind, message } => (*kind, message.as_str(), 1),
        };
        eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
        ExitCode::from(code)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::Usage(e.render().to_string().trim().to_string()).report(),
    };
    tracing_subscriber::fmt()
        .with_max_level(cli.log)
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(report) => {
            if let Some(r) = report {
                let text = serde_json::to_string_pretty(&r).expect("reports serialize");
                // a closed pipe downstream is not our failure
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => f.report(),
    }
}
