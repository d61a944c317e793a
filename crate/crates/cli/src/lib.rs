//! The `xmc` command line.
//!
//! Subcommands mirror the HTTP API: `analyze` and `verify-claim` score one
//! image-text pair in-process, `evaluate` runs the tampering harness and
//! `serve` runs the service. Reports go to stdout, logs to stderr.
//!
//! Exit codes: 0 success, 2 usage, 78 configuration, 1 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use xmc_core::entity::{EntityType, Language};
use xmc_core::eval::{ParentClassMode, TamperingStrategy};
use xmc_service::config::BackendKind;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 78;
pub const EXIT_RUNTIME: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "xmc", version, about = "Cross-modal entity consistency checks for news image-text pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link, crawl and score every entity of one document.
    Analyze(AnalyzeArgs),
    /// Score one claimed entity (label or knowledge-base id) against an image.
    VerifyClaim(VerifyArgs),
    /// Run the tampering evaluation over a dataset and catalog.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service until SIGINT or SIGTERM.
    Serve(ServeArgs),
}

/// Where engines get their features and knowledge from.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Service configuration file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature provider backend.
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    /// Fixture vector directory for `--backend fixture`.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Feature server address for `--backend remote`.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Offline knowledge bundle (gazetteer, records and reference images).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Directory of saved article pages with an `index.tsv`.
    #[arg(long)]
    pub articles: Option<PathBuf>,
    /// On-disk cache directory; in-memory when omitted.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_language)]
    pub language: Option<Language>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["url", "text_file"]))]
pub struct AnalyzeArgs {
    /// News article to fetch; its main image is used unless `--image` is given.
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub text_file: Option<PathBuf>,
    /// Required with `--text-file`.
    #[arg(long, required_unless_present = "url")]
    pub image: Option<PathBuf>,
    /// Entity types to score, e.g. `p,l` (person, location, event).
    #[arg(long, value_delimiter = ',', value_parser = parse_entity_type)]
    pub types: Vec<EntityType>,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "OUT")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Label or knowledge-base id of the claimed entity.
    #[arg(long)]
    pub entity: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Also write the full report here.
    #[arg(long, value_name = "OUT")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Strategy name, repeatable or comma-separated; `all` runs the table.
    #[arg(long, required = true, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy: Vec<StrategyChoice>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `run.json` and `table.txt`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Reference images per entity.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_parent_mode)]
    pub parent_class_mode: Option<ParentClassMode>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyChoice {
    All,
    One(TamperingStrategy),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse()
}

fn parse_language(s: &str) -> Result<Language, String> {
    s.parse().map_err(|e: xmc_core::entity::LinkError| e.to_string())
}

fn parse_entity_type(s: &str) -> Result<EntityType, String> {
    s.parse().map_err(|e: xmc_core::entity::LinkError| e.to_string())
}

fn parse_strategy(s: &str) -> Result<StrategyChoice, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(StrategyChoice::All);
    }
    s.parse().map(StrategyChoice::One).map_err(|e: xmc_core::eval::EvalError| e.to_string())
}

fn parse_parent_mode(s: &str) -> Result<ParentClassMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| "expected instance-of, subclass-of or union".to_string())
}

/// Logs go to stderr; `XMC_LOG` takes an env-filter directive.
pub fn init_logging(default: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_env("XMC_LOG").unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_target(false).try_init();
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    init_logging(if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" });
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => commands::analyze(a),
        Command::VerifyClaim(v) => commands::verify_claim(v),
        Command::Evaluate(e) => commands::evaluate(e),
        Command::Serve(s) => commands::serve(s),
    }
}
