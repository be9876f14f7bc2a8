//! `grain-attr`: explain, fidelity, compare and serve from the command line.
//!
//! Machine-readable output goes to `--out` files in the store's document
//! format; stdout carries human-oriented tables. Failures print one JSON line
//! `{"code": ..., "message": ...}` on stderr.

pub mod groups;

use std::fmt::Write as _;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use grain_attr_core::attribution::{explain, AttributionError, ExplainOptions};
use grain_attr_core::fidelity::{evaluate_fidelity, FidelityError, FidelityReport};
use grain_attr_core::model_client::ScoreError;
use grain_attr_core::segmentation::{group_text, PresetLevel, Segmentation};
use grain_attr_core::task_store::{
    read_explanation_file, read_task_file, to_document, write_atomic, DocumentKind, ExplanationRecord,
    StoreError, Task,
};
use grain_attr_core::{Clock, Session};
use serde::Serialize;

pub use groups::GroupsFile;

#[derive(Debug, Parser)]
#[command(name = "grain-attr", version, about = "Shapley attributions over custom word groups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute a task's output to word groups and write the explanation.
    Explain(ExplainArgs),
    /// Deletion and insertion curves for a saved explanation.
    Fidelity(FidelityArgs),
    /// Explain under two groupings and report which is more faithful.
    Compare(CompareArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, value_parser = parse_level, conflicts_with = "groups", required_unless_present = "groups")]
    pub preset: Option<PresetLevel>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FidelityArgs {
    #[arg(long)]
    pub explanation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, num_args = 2, value_names = ["A", "B"], required = true)]
    pub groups: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn parse_level(s: &str) -> Result<PresetLevel, String> {
    s.parse()
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(code: &str, message: impl ToString) -> Self {
        let exit_code = match code {
            "usage" | "invalid_input" | "not_found" | "input_mismatch" | "invalid_segmentation"
            | "cap_below_floor" | "invalid_model" | "invalid_evaluator" | "invalid_template" => EXIT_USAGE,
            "budget_exhausted" | "budget_too_small" => EXIT_BUDGET,
            "endpoint" => EXIT_MODEL,
            _ => EXIT_OTHER,
        };
        Self {
            code: code.to_string(),
            message: message.to_string(),
            exit_code,
        }
    }

    /// The single stderr line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<AttributionError> for CliError {
    fn from(e: AttributionError) -> Self {
        Self::new(e.code(), e)
    }
}

impl From<FidelityError> for CliError {
    fn from(e: FidelityError) -> Self {
        Self::new(e.code(), e)
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        Self::new(e.code(), e)
    }
}

fn store_error(path: &Path, e: StoreError) -> CliError {
    let code = match e {
        StoreError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => "not_found",
        StoreError::Io(_) => "io",
        _ => "invalid_input",
    };
    CliError::new(code, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn load_task(path: &Path) -> Result<Task, CliError> {
    read_task_file(path).map_err(|e| store_error(path, e))
}

fn load_groups(path: &Path, task: &Task) -> Result<Segmentation, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| store_error(path, e.into()))?;
    let tokens = task.tokens().map_err(|e| CliError::new("invalid_input", e))?;
    GroupsFile::parse(&text)
        .and_then(|file| groups::resolve(file, &tokens))
        .map_err(|e| CliError::new("invalid_input", format!("{}: {e}", path.display())))
}

fn options(seed: u64, max_samples: Option<usize>) -> ExplainOptions {
    ExplainOptions {
        seed,
        max_samples,
        clock: Clock::from_env(),
        ..ExplainOptions::default()
    }
}

async fn explain_record(
    session: &Session,
    task: &Task,
    seg: Segmentation,
    seed: u64,
    max_samples: Option<usize>,
) -> Result<ExplanationRecord, CliError> {
    let scorer = session.scorer(task)?;
    let result = explain(task, &seg, &scorer, &options(seed, max_samples)).await?;
    ExplanationRecord::new(task.clone(), seg, result).map_err(|e| CliError::new("invalid_input", e))
}

async fn fidelity_of(session: &Session, record: &ExplanationRecord) -> Result<FidelityReport, CliError> {
    let scorer = session.scorer(&record.task)?;
    let opts = options(record.attribution.provenance.seed, None);
    Ok(evaluate_fidelity(&record.task, &record.segmentation, &record.attribution, &scorer, &opts).await?)
}

fn excerpt(text: &str, width: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        let cut: String = flat.chars().take(width - 3).collect();
        format!("{cut}...")
    }
}

/// Per-group φ table.
pub fn phi_table(record: &ExplanationRecord) -> String {
    let attr = &record.attribution;
    let mut out = String::new();
    let _ = writeln!(out, "{:>5}  {:>5}  {:>10}  text", "group", "words", "phi");
    for (group, phi) in record.segmentation.groups().iter().zip(&attr.phi) {
        let text = group_text(&record.tokens, group);
        let shown = match &group.label {
            Some(label) => format!("[{label}] {}", excerpt(&text, 48)),
            None => excerpt(&text, 60),
        };
        let phi = if phi.abs() < 5e-7 { 0.0 } else { *phi };
        let _ = writeln!(out, "{:>5}  {:>5}  {:>+10.6}  {shown}", group.id.0, group.len(), phi);
    }
    let sum: f64 = attr.phi.iter().sum::<f64>() + 0.0;
    let _ = writeln!(
        out,
        "f(x) = {:.6}  f(empty) = {:.6}  sum(phi) = {:.6}  samples = {} ({})",
        attr.full_value,
        attr.base_value,
        sum,
        attr.n_samples_used,
        if attr.exact { "exact" } else { "sampled" }
    );
    out
}

pub fn fidelity_summary(report: &FidelityReport) -> String {
    format!(
        "deletion AUC   {:.6}\ninsertion AUC  {:.6}\nfidelity       {:.6}\n",
        report.deletion.auc, report.insertion.auc, report.score
    )
}

pub async fn run(cli: Cli, stdout: &mut impl Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::new("io", e);
    match cli.command {
        Command::Explain(args) => {
            let task = load_task(&args.task)?;
            let seg = match (&args.groups, args.preset) {
                (Some(path), _) => load_groups(path, &task)?,
                (None, Some(level)) => {
                    let tokens = task.tokens().map_err(|e| CliError::new("invalid_input", e))?;
                    grain_attr_core::preset_segmentation(&tokens, level)
                }
                (None, None) => return Err(CliError::new("usage", "one of --preset or --groups is required")),
            };
            let session = Session::new();
            let record = explain_record(&session, &task, seg, args.seed, args.max_samples).await?;
            write_file(&args.out, &to_document(DocumentKind::Explanation, &record))?;
            write!(stdout, "{}", phi_table(&record)).map_err(io)?;
            writeln!(stdout, "explanation {}", record.id).map_err(io)?;
        }
        Command::Fidelity(args) => {
            let record = read_explanation_file(&args.explanation).map_err(|e| store_error(&args.explanation, e))?;
            let report = fidelity_of(&Session::new(), &record).await?;
            write_file(&args.out, &to_document(DocumentKind::FidelityReport, &report))?;
            if let Some(csv) = &args.csv {
                write_file(csv, &report.to_csv())?;
            }
            write!(stdout, "{}", fidelity_summary(&report)).map_err(io)?;
        }
        Command::Compare(args) => {
            let task = load_task(&args.task)?;
            let session = Session::new();
            let mut scores = Vec::new();
            for path in &args.groups {
                let seg = load_groups(path, &task)?;
                let groups = seg.len();
                let record = explain_record(&session, &task, seg, args.seed, args.max_samples).await?;
                let report = fidelity_of(&session, &record).await?;
                writeln!(
                    stdout,
                    "{}  groups = {groups}  fidelity = {:.6}",
                    path.display(),
                    report.score
                )
                .map_err(io)?;
                scores.push(report.score);
            }
            let verdict = if scores[0] > scores[1] {
                format!("winner: {}", args.groups[0].display())
            } else if scores[1] > scores[0] {
                format!("winner: {}", args.groups[1].display())
            } else {
                "tie".to_string()
            };
            writeln!(stdout, "{verdict}").map_err(io)?;
        }
        Command::Serve(args) => {
            let config = grain_attr_service::ServiceConfig::from_file(&args.config)
                .map_err(|e| CliError::new("invalid_input", e))?;
            let addr = SocketAddr::new(args.host, args.port);
            grain_attr_service::serve(config, addr).await.map_err(io)?;
        }
    }
    Ok(())
}
