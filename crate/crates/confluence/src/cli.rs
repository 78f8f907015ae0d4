//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage (bad arguments, unknown run or profile),
//! 2 invalid profile, 3 task failure or ordering violation, 4 threshold
//! alert with `--strict`, 5 storage, I/O or network trouble. Failures print
//! one JSON line `{"error": kind, "message": text}` on stderr.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use confluence_core::ingestion::{IngestionDocument, Task, TaskStatus};
use confluence_core::enrich::builtin_registry;
use confluence_core::{load_profile, Gazetteer};
use serde::Serialize;
use serde_json::json;

use crate::config::Settings;
use crate::engine::{Engine, EngineError};
use crate::mock::{load_fixture_dir, MockOai};
use crate::qa::{self, ReportKind, ReportStage};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_PROFILE: u8 = 2;
pub const EXIT_TASK: u8 = 3;
pub const EXIT_ALERT: u8 = 4;
pub const EXIT_OTHER: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "confluence", version, about = "Harvest, map, enrich and stage metadata records")]
pub struct Cli {
    /// Settings file (default: ./confluence.toml when present).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured data directory.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check or install ingestion profiles.
    Profile {
        #[command(subcommand)]
        action: ProfileAction,
    },
    /// Run ingestion tasks for a profile.
    Ingest {
        profile: String,
        /// fetch, enrich, save, check, delete, cleanup or all.
        #[arg(long, default_value = "all")]
        task: String,
        /// Start a new run instead of continuing the latest unfinished one.
        #[arg(long)]
        new_run: bool,
        /// Exit 4 when the run raised a threshold alert.
        #[arg(long)]
        strict: bool,
    },
    /// List runs.
    Runs {
        #[arg(long)]
        profile: Option<String>,
    },
    /// Write a QA report as CSV and JSON under reports/.
    Report {
        profile: String,
        run_id: String,
        /// values, counts, stage-diff or validation.
        kind: String,
        #[arg(long)]
        field: Option<String>,
        /// raw or enriched.
        #[arg(long, default_value = "enriched")]
        stage: String,
    },
    /// Summarise validation failures of a run.
    ValidateRun { profile: String, run_id: String },
    /// Write a run's enrichment provenance as patches.jsonl.
    ExportPatches { profile: String, run_id: String },
    /// Copy a run's staged records to production.
    Promote { profile: String, run_id: String },
    /// Write production records as gzipped JSON lines.
    Dump {
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<std::net::IpAddr>,
    },
    /// Serve a directory of OAI records over OAI-PMH.
    MockOai {
        fixture_dir: PathBuf,
        #[arg(long, default_value_t = 8081)]
        port: u16,
        #[arg(long, default_value_t = 100)]
        page_size: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum ProfileAction {
    /// Check a profile document without installing it.
    Validate { file: PathBuf },
    /// Validate and install a profile document.
    Add { file: PathBuf },
    /// List installed profiles.
    List,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: String,
    pub message: String,
}

impl Failure {
    fn new(code: u8, error: &str, message: impl Into<String>) -> Self {
        Self { code, error: error.to_owned(), message: message.into() }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match e {
            EngineError::NotFound(_) | EngineError::BadRequest(_) => EXIT_USAGE,
            EngineError::Profile(_) => EXIT_PROFILE,
            EngineError::Conflict(_) | EngineError::Order(_) => EXIT_TASK,
            EngineError::Store(_) | EngineError::Io(_) => EXIT_OTHER,
        };
        Failure::new(code, e.kind(), e.to_string())
    }
}

type CliResult = Result<(), Failure>;

/// Parses `args` and runs the command.
pub fn main_with(args: impl IntoIterator<Item = OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.error, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable output"));
}

fn settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut s = Settings::load(cli.config.as_deref()).map_err(|e| Failure::new(EXIT_USAGE, "config", e.to_string()))?;
    if let Some(d) = &cli.data_dir {
        s.data_dir = d.clone();
    }
    Ok(s)
}

fn open_engine(s: &Settings) -> Result<Engine, Failure> {
    Ok(Engine::open(s.engine_config())?)
}

/// The run, checked to belong to `profile`.
fn profile_run(engine: &Engine, profile: &str, run_id: &str) -> Result<IngestionDocument, Failure> {
    let doc = engine.run(run_id)?;
    if doc.profile_name != profile {
        return Err(Failure::new(EXIT_USAGE, "not-found", format!("run {run_id} belongs to profile {:?}", doc.profile_name)));
    }
    Ok(doc)
}

pub fn run(cli: Cli) -> CliResult {
    let s = settings(&cli)?;
    match cli.command {
        Command::Profile { action: ProfileAction::Validate { file } } => {
            let bytes = std::fs::read(&file).map_err(|e| Failure::new(EXIT_USAGE, "io", format!("{}: {e}", file.display())))?;
            let registry = builtin_registry(Arc::new(Gazetteer::bundled().clone()));
            let p = load_profile(&bytes, &registry).map_err(|e| Failure::from(EngineError::from(e)))?;
            print(&json!({ "valid": true, "name": p.name }));
        }
        Command::Profile { action: ProfileAction::Add { file } } => {
            let bytes = std::fs::read(&file).map_err(|e| Failure::new(EXIT_USAGE, "io", format!("{}: {e}", file.display())))?;
            let p = open_engine(&s)?.install_profile(&bytes)?;
            print(&json!({ "installed": p.name }));
        }
        Command::Profile { action: ProfileAction::List } => {
            for (name, p) in open_engine(&s)?.profiles()? {
                match p {
                    Ok(_) => print(&json!({ "name": name, "valid": true })),
                    Err(e) => print(&json!({ "name": name, "valid": false, "error": e.kind(), "message": e.to_string() })),
                }
            }
        }
        Command::Ingest { profile, task, new_run, strict } => {
            let engine = open_engine(&s)?;
            engine.profile(&profile)?;
            let task = match task.as_str() {
                "all" => None,
                t => Some(Task::parse(t).ok_or_else(|| Failure::new(EXIT_USAGE, "usage", format!("unknown task {t:?}")))?),
            };
            let run = if new_run { engine.create_run(&profile)? } else { engine.current_or_new_run(&profile)? };
            let doc = match task {
                None => engine.run_all(&run.run_id)?,
                Some(t) => engine.run_task(&run.run_id, t)?,
            };
            print(&doc);
            if let Some((t, state)) = doc.tasks.iter().find(|(_, st)| st.status == TaskStatus::Failed) {
                let message = state.message.clone().unwrap_or_default();
                return Err(Failure::new(EXIT_TASK, "task-failed", format!("{t}: {message}")));
            }
            if strict && !doc.alerts.is_empty() {
                let metrics: Vec<_> = doc.alerts.iter().map(|a| a.metric.as_str()).collect();
                return Err(Failure::new(EXIT_ALERT, "threshold-alert", format!("thresholds exceeded: {}", metrics.join(", "))));
            }
        }
        Command::Runs { profile } => {
            for doc in open_engine(&s)?.runs(profile.as_deref())? {
                print(&doc);
            }
        }
        Command::Report { profile, run_id, kind, field, stage } => {
            let kind = ReportKind::parse(&kind).ok_or_else(|| Failure::new(EXIT_USAGE, "usage", format!("unknown report {kind:?}")))?;
            let stage = ReportStage::parse(&stage).ok_or_else(|| Failure::new(EXIT_USAGE, "usage", format!("unknown stage {stage:?}")))?;
            let engine = open_engine(&s)?;
            profile_run(&engine, &profile, &run_id)?;
            let report = qa::generate(&engine, &run_id, kind, field.as_deref(), stage)?;
            let path = qa::write_report(&engine, &run_id, kind, field.as_deref(), stage, &report)?;
            print(&json!({ "path": path, "rows": report.len() }));
        }
        Command::ValidateRun { profile, run_id } => {
            let engine = open_engine(&s)?;
            profile_run(&engine, &profile, &run_id)?;
            let report = qa::generate(&engine, &run_id, ReportKind::Validation, None, ReportStage::Enriched)?;
            let path = qa::write_report(&engine, &run_id, ReportKind::Validation, None, ReportStage::Enriched, &report)?;
            print(&json!({ "path": path, "violations": report }));
        }
        Command::ExportPatches { profile, run_id } => {
            let engine = open_engine(&s)?;
            profile_run(&engine, &profile, &run_id)?;
            print(&engine.export_patches(&run_id)?);
        }
        Command::Promote { profile, run_id } => {
            let engine = open_engine(&s)?;
            profile_run(&engine, &profile, &run_id)?;
            print(&engine.promote(&run_id)?);
        }
        Command::Dump { profile, out } => {
            let engine = open_engine(&s)?;
            let out = out.unwrap_or_else(|| engine.default_dump_path(profile.as_deref()));
            let records = engine.dump(profile.as_deref(), &out)?;
            print(&json!({ "path": out, "records": records }));
        }
        Command::Serve { port, bind } => {
            let engine = Arc::new(open_engine(&s)?);
            let addr = SocketAddr::new(bind.unwrap_or(s.bind), port.unwrap_or(s.port));
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_OTHER, "io", e.to_string()))?;
            eprintln!("listening on http://{addr}/v1/");
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            rt.block_on(crate::httpd::serve(engine, addr, s.ui_dir.clone(), shutdown))
                .map_err(|e| Failure::new(EXIT_OTHER, "io", format!("{addr}: {e}")))?;
        }
        Command::MockOai { fixture_dir, port, page_size } => {
            let records = load_fixture_dir(&fixture_dir).map_err(|e| Failure::new(EXIT_USAGE, "fixtures", e.to_string()))?;
            let n = records.len();
            let mock = MockOai::start(records, page_size, port).map_err(|e| Failure::new(EXIT_OTHER, "io", e.to_string()))?;
            print(&json!({ "url": mock.url(), "records": n }));
            mock.wait();
        }
    }
    Ok(())
}
