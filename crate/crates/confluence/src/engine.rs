//! The ingestion engine: profiles on disk, run documents, the six tasks,
//! promotion, patch export and dumps. The CLI and the HTTP service both
//! drive this type.
//!
//! Data directory layout:
//!
//! ```text
//! profiles/<name>.json
//! runs/<profile>/<runId>/profile.json          profile frozen at run creation
//! runs/<profile>/<runId>/fetch/batch-NNNNN.jsonl
//! runs/<profile>/<runId>/tombstones.jsonl      deleted-flagged local ids
//! runs/<profile>/<runId>/enrich/batch-NNNNN.jsonl
//! runs/<profile>/<runId>/enrich/batch-NNNNN.outcomes.jsonl
//! runs/<profile>/<runId>/geocode-cache.json
//! runs/<profile>/<runId>/patches.jsonl
//! reports/<profile>/<runId>/
//! dumps/
//! alerts.jsonl
//! confluence.db
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use confluence_core::enrich::builtin_registry;
use confluence_core::geocode::Geocoder;
use confluence_core::hash::mint_record_id;
use confluence_core::ingestion::{exceeded_thresholds, Alert, IngestionDocument, Task, TaskStatus, TransitionError};
use confluence_core::model::{leaf_strings, parse_jsonld, serialize_jsonld, MapRecord};
use confluence_core::pipeline::{run_pipeline, Clock, Envelope, Status, StepKind, StepOutcome, StepRegistry};
use confluence_core::profile::{check_profile, load_profile, resolve_pipeline, IngestionProfile, ProfileError};
use confluence_core::Gazetteer;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geocache::CachedGeocoder;
use crate::harvest::{harvest, OaiOptions, RawRecord};
use crate::store::{Area, SqliteStore, Storage, StoreError, StoredRecord};

pub const BATCH_SIZE: usize = 1000;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub data_dir: PathBuf,
    /// Enrichment worker threads; 0 uses one per core.
    pub workers: usize,
    pub oai: OaiOptions,
    pub keep_runs: usize,
    pub batch_size: usize,
}

impl EngineConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), workers: 0, oai: OaiOptions::default(), keep_runs: 3, batch_size: BATCH_SIZE }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{0} not found")]
    NotFound(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Order(#[from] TransitionError),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(String),
}

impl EngineError {
    /// Short machine-readable name, used in error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::NotFound(_) => "not-found",
            EngineError::Profile(_) => "profile",
            EngineError::Conflict(_) => "conflict",
            EngineError::Order(_) => "task-order",
            EngineError::BadRequest(_) => "bad-request",
            EngineError::Store(_) => "storage",
            EngineError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Receives threshold alerts.
pub trait AlertSink: Send + Sync {
    fn emit(&self, alert: &Alert) -> std::io::Result<()>;
}

/// Appends alerts to a newline-delimited JSON file.
pub struct AlertLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl AlertLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), lock: Mutex::new(()) }
    }
}

impl AlertSink for AlertLog {
    fn emit(&self, alert: &Alert) -> std::io::Result<()> {
        let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_vec(alert)?;
        line.push(b'\n');
        f.write_all(&line)
    }
}

/// Milliseconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// One line of an enrich outcomes sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutcomeLine {
    pub id: String,
    pub local_id: String,
    pub outcomes: Vec<StepOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatchSummary {
    pub path: String,
    pub records: u64,
    pub entries: u64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordQuery {
    pub profile: Option<String>,
    pub q: Option<String>,
    pub field: Option<String>,
    /// `staging` (default) or `production`.
    pub area: Option<String>,
    pub limit: Option<usize>,
}

/// A record as seen in one run: the harvested tree, the enriched record and
/// the step outcomes.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRecord {
    pub id: String,
    pub raw: Option<RawRecord>,
    pub record: Option<Value>,
    pub outcomes: Vec<StepOutcome>,
}

pub struct Engine {
    config: EngineConfig,
    store: Arc<dyn Storage>,
    geocoder: Arc<dyn Geocoder>,
    registry: StepRegistry,
    alerts: Arc<dyn AlertSink>,
    docs: Mutex<()>,
    pool: rayon::ThreadPool,
}

impl Engine {
    /// An engine over `config.data_dir` with SQLite storage.
    pub fn open(config: EngineConfig) -> Result<Self> {
        fs::create_dir_all(&config.data_dir)?;
        let store = SqliteStore::open(&config.data_dir.join("confluence.db"))?;
        Self::with_store(config, Arc::new(store))
    }

    pub fn with_store(config: EngineConfig, store: Arc<dyn Storage>) -> Result<Self> {
        for sub in ["profiles", "runs", "reports", "dumps"] {
            fs::create_dir_all(config.data_dir.join(sub))?;
        }
        let geocoder: Arc<dyn Geocoder> = Arc::new(Gazetteer::bundled().clone());
        let alerts = Arc::new(AlertLog::new(config.data_dir.join("alerts.jsonl")));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| EngineError::Io(e.to_string()))?;
        Ok(Self {
            registry: builtin_registry(geocoder.clone()),
            geocoder,
            store,
            alerts,
            docs: Mutex::new(()),
            pool,
            config,
        })
    }

    pub fn with_alert_sink(mut self, sink: Arc<dyn AlertSink>) -> Self {
        self.alerts = sink;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &StepRegistry {
        &self.registry
    }

    pub fn store(&self) -> &dyn Storage {
        self.store.as_ref()
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    // -----------------------------------------------------------------------
    // Profiles

    fn profile_path(&self, name: &str) -> Result<PathBuf> {
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_') {
            return Err(EngineError::NotFound(format!("profile {name:?}")));
        }
        Ok(self.config.data_dir.join("profiles").join(format!("{name}.json")))
    }

    pub fn profile(&self, name: &str) -> Result<IngestionProfile> {
        let path = self.profile_path(name)?;
        let bytes = fs::read(&path).map_err(|_| EngineError::NotFound(format!("profile {name:?}")))?;
        Ok(load_profile(&bytes, &self.registry)?)
    }

    /// Every profile file, valid or not, by name.
    pub fn profiles(&self) -> Result<Vec<(String, std::result::Result<IngestionProfile, ProfileError>)>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.config.data_dir.join("profiles"))? {
            let path = entry?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let loaded = fs::read(&path)
                .map_err(|e| ProfileError::Parse(e.to_string()))
                .and_then(|b| load_profile(&b, &self.registry));
            out.push((name, loaded));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// Validates `document` and stores it as `profiles/<name>.json`.
    pub fn install_profile(&self, document: &[u8]) -> Result<IngestionProfile> {
        let profile = load_profile(document, &self.registry)?;
        self.write_profile(&profile)?;
        Ok(profile)
    }

    fn write_profile(&self, profile: &IngestionProfile) -> Result<()> {
        let path = self.profile_path(&profile.name)?;
        let mut json = serde_json::to_vec_pretty(profile).map_err(|e| EngineError::Io(e.to_string()))?;
        json.push(b'\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Enables or disables pipeline step `index`. Takes effect on the next run.
    pub fn set_step_enabled(&self, name: &str, index: usize, enabled: bool) -> Result<IngestionProfile> {
        let mut profile = self.profile(name)?;
        let len = profile.pipeline.len();
        let step = profile
            .pipeline
            .get_mut(index)
            .ok_or_else(|| EngineError::NotFound(format!("step {index} of profile {name:?} ({len} steps)")))?;
        step.enabled = enabled;
        check_profile(&profile, &self.registry)?;
        self.write_profile(&profile)?;
        Ok(profile)
    }

    // -----------------------------------------------------------------------
    // Runs

    pub fn run_dir(&self, doc: &IngestionDocument) -> PathBuf {
        self.config.data_dir.join("runs").join(&doc.profile_name).join(&doc.run_id)
    }

    pub fn reports_dir(&self, doc: &IngestionDocument) -> PathBuf {
        self.config.data_dir.join("reports").join(&doc.profile_name).join(&doc.run_id)
    }

    pub fn run(&self, run_id: &str) -> Result<IngestionDocument> {
        self.store.get_run(run_id)?.ok_or_else(|| EngineError::NotFound(format!("run {run_id:?}")))
    }

    pub fn runs(&self, profile: Option<&str>) -> Result<Vec<IngestionDocument>> {
        Ok(self.store.runs(profile)?)
    }

    /// The profile as it was when `doc` was created.
    pub fn run_profile(&self, doc: &IngestionDocument) -> Result<IngestionProfile> {
        let bytes = fs::read(self.run_dir(doc).join("profile.json"))?;
        Ok(load_profile(&bytes, &self.registry)?)
    }

    /// Starts a new run of `profile_name`. Fails while another run of the
    /// profile is active.
    pub fn create_run(&self, profile_name: &str) -> Result<IngestionDocument> {
        let profile = self.profile(profile_name)?;
        let steps = resolve_pipeline(&profile, &self.registry)?;
        let _g = self.lock();
        let runs = self.store.runs(Some(profile_name))?;
        if let Some(active) = runs.iter().find(|d| d.is_active()) {
            return Err(EngineError::Conflict(format!("run {} of profile {profile_name:?} is still active", active.run_id)));
        }
        let sequence = runs.iter().map(|d| d.sequence).max().unwrap_or(0) + 1;
        let mut doc = IngestionDocument::new(profile_name, sequence, steps.iter().map(|s| s.name.clone()).collect(), &timestamp());
        let dir = self.run_dir(&doc);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("profile.json"), serde_json::to_vec_pretty(&profile).map_err(|e| EngineError::Io(e.to_string()))?)?;
        doc.staging.directory = Some(format!("runs/{}/{}", doc.profile_name, doc.run_id));
        self.store.put_run(&doc)?;
        Ok(doc)
    }

    /// The latest unfinished run of `profile_name`, or a new one.
    pub fn current_or_new_run(&self, profile_name: &str) -> Result<IngestionDocument> {
        self.profile(profile_name)?;
        match self.store.runs(Some(profile_name))?.into_iter().last() {
            Some(doc) if !doc.is_complete() => Ok(doc),
            _ => self.create_run(profile_name),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.docs.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Marks `task` running, or reports why it may not start.
    pub fn begin_task(&self, run_id: &str, task: Task) -> Result<IngestionDocument> {
        let _g = self.lock();
        let mut doc = self.run(run_id)?;
        doc.begin(task, &timestamp())?;
        self.store.put_run(&doc)?;
        Ok(doc)
    }

    /// Runs a task already marked running by [`begin_task`](Self::begin_task).
    /// Task failures are recorded in the returned document, not returned as
    /// errors.
    pub fn execute_task(&self, run_id: &str, task: Task) -> Result<IngestionDocument> {
        let mut doc = self.run(run_id)?;
        if doc.status(task) != TaskStatus::Running {
            return Err(TransitionError::NotRunning(task).into());
        }
        let outcome = self.run_profile(&doc).map_err(|e| e.to_string()).and_then(|profile| match task {
            Task::Fetch => self.fetch(&mut doc, &profile),
            Task::Enrich => self.enrich(&mut doc, &profile),
            Task::Save => self.save(&mut doc, &profile),
            Task::CheckCounts => self.check_counts(&mut doc, &profile),
            Task::RemoveDeleted => self.remove_deleted(&mut doc),
            Task::Cleanup => self.cleanup(&doc),
        });
        let _g = self.lock();
        let at = timestamp();
        match outcome {
            Ok(()) => doc.complete(task, &at)?,
            Err(message) => doc.fail(task, &message, &at)?,
        }
        self.store.put_run(&doc)?;
        Ok(doc)
    }

    pub fn run_task(&self, run_id: &str, task: Task) -> Result<IngestionDocument> {
        self.begin_task(run_id, task)?;
        self.execute_task(run_id, task)
    }

    /// Runs the remaining tasks of `run_id` in order, stopping at the first
    /// failure.
    pub fn run_all(&self, run_id: &str) -> Result<IngestionDocument> {
        let mut doc = self.run(run_id)?;
        while let Some(task) = doc.next_task() {
            doc = self.run_task(run_id, task)?;
            if doc.status(task) == TaskStatus::Failed {
                break;
            }
        }
        Ok(doc)
    }

    // -----------------------------------------------------------------------
    // Tasks

    fn fetch(&self, doc: &mut IngestionDocument, profile: &IngestionProfile) -> std::result::Result<(), String> {
        let run_dir = self.run_dir(doc);
        let dir = run_dir.join("fetch");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
        }
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        doc.counts.fetched = 0;
        doc.counts.harvested_deletions = 0;
        doc.failures.remove("fetch");
        doc.staging.fetch_batches.clear();
        doc.staging.tombstones = Some("tombstones.jsonl".into());
        let mut tombstones = BufWriter::new(File::create(run_dir.join("tombstones.jsonl")).map_err(|e| e.to_string())?);
        let mut batches = BatchWriter::new(dir, "fetch", self.config.batch_size);
        let mut failure = None;
        let mut skipped = 0;
        match harvest(&profile.harvest, self.config.oai.clone()) {
            Err(e) => failure = Some(e.to_string()),
            Ok(stream) => {
                for item in stream {
                    match item {
                        Ok(r) if r.deleted => {
                            let line = serde_json::json!({"localId": r.local_id, "datestamp": r.datestamp});
                            writeln!(tombstones, "{line}").map_err(|e| e.to_string())?;
                            doc.counts.harvested_deletions += 1;
                        }
                        Ok(r) => {
                            let line = serde_json::to_string(&r).map_err(|e| e.to_string())?;
                            batches.write(&line).map_err(|e| e.to_string())?;
                            doc.counts.fetched += 1;
                        }
                        Err(e) if e.is_record_level() => skipped += 1,
                        Err(e) => {
                            failure = Some(e.to_string());
                            break;
                        }
                    }
                }
            }
        }
        tombstones.flush().map_err(|e| e.to_string())?;
        doc.staging.fetch_batches = batches.finish().map_err(|e| e.to_string())?;
        if skipped > 0 {
            doc.failures.insert("fetch".into(), skipped);
        }
        match failure {
            Some(m) => Err(m),
            None => Ok(()),
        }
    }

    fn enrich(&self, doc: &mut IngestionDocument, profile: &IngestionProfile) -> std::result::Result<(), String> {
        let run_dir = self.run_dir(doc);
        let dir = run_dir.join("enrich");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
        }
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let cache_path = run_dir.join("geocode-cache.json");
        let cache = Arc::new(CachedGeocoder::load(&cache_path, self.geocoder.clone()));
        let registry = builtin_registry(cache.clone());
        let steps = resolve_pipeline(profile, &registry).map_err(|e| e.to_string())?;
        let clock = WallClock::start();
        let sequence = doc.sequence;

        doc.counts.enriched = 0;
        doc.failures.retain(|k, _| k == "fetch");
        doc.staging.enrich_batches.clear();
        let mut failures: BTreeMap<String, u64> = BTreeMap::new();
        for (i, batch) in doc.staging.fetch_batches.clone().iter().enumerate() {
            let lines = read_lines(&run_dir.join(batch)).map_err(|e| format!("{batch}: {e}"))?;
            let processed: Vec<std::result::Result<(String, OutcomeLine), String>> = self.pool.install(|| {
                lines
                    .par_iter()
                    .map(|line| {
                        let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("{batch}: {e}"))?;
                        let env = run_pipeline(Envelope::raw(raw.tree, &profile.name), &steps, &clock);
                        let outcomes = env.outcomes.clone();
                        let mut record = match env.into_record() {
                            Some(r) => r,
                            None => stub_record(&profile.name, &raw.local_id),
                        };
                        record.ingestion_sequence = sequence;
                        let line = String::from_utf8(serialize_jsonld(&record)).expect("JSON is UTF-8");
                        Ok((line, OutcomeLine { id: record.id.clone(), local_id: record.local_id.clone(), outcomes }))
                    })
                    .collect()
            });
            let name = format!("enrich/batch-{:05}.jsonl", i + 1);
            let mut records = BufWriter::new(File::create(run_dir.join(&name)).map_err(|e| e.to_string())?);
            let mut sidecar = BufWriter::new(
                File::create(run_dir.join(format!("enrich/batch-{:05}.outcomes.jsonl", i + 1))).map_err(|e| e.to_string())?,
            );
            for p in processed {
                let (line, outcome) = p?;
                writeln!(records, "{line}").map_err(|e| e.to_string())?;
                writeln!(sidecar, "{}", serde_json::to_string(&outcome).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
                let mut hit: HashSet<&str> = HashSet::new();
                for o in &outcome.outcomes {
                    if o.status == Status::Failed || o.unresolved > 0 {
                        hit.insert(o.step_name.as_str());
                    }
                }
                for step in hit {
                    *failures.entry(step.to_owned()).or_default() += 1;
                }
                doc.counts.enriched += 1;
            }
            records.flush().map_err(|e| e.to_string())?;
            sidecar.flush().map_err(|e| e.to_string())?;
            doc.staging.enrich_batches.push(name);
        }
        doc.failures.extend(failures);
        cache.save(&cache_path).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn save(&self, doc: &mut IngestionDocument, profile: &IngestionProfile) -> std::result::Result<(), String> {
        let validator = profile.validator();
        let existing: HashMap<String, StoredRecord> = self
            .store
            .records(Area::Staging, Some(&profile.name))
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.id.clone(), r))
            .collect();
        let mut seen: HashMap<String, (String, bool)> =
            existing.into_iter().map(|(id, r)| (id, (r.content_hash, r.deleted))).collect();
        doc.baseline = Some(seen.values().filter(|(_, deleted)| !deleted).count() as u64);
        let c = &mut doc.counts;
        (c.added, c.changed, c.unchanged, c.excluded) = (0, 0, 0, 0);
        let run_dir = self.run_dir(doc);
        for batch in doc.staging.enrich_batches.clone() {
            let mut out = Vec::new();
            for line in read_lines(&run_dir.join(&batch)).map_err(|e| format!("{batch}: {e}"))? {
                let record = parse_jsonld(line.as_bytes()).map_err(|e| format!("{batch}: {e}"))?;
                if !validator.validate(&record).is_valid() {
                    doc.counts.excluded += 1;
                    continue;
                }
                let hash = record.content_hash();
                match seen.get(&record.id) {
                    None | Some((_, true)) => doc.counts.added += 1,
                    Some((h, false)) if *h != hash => doc.counts.changed += 1,
                    Some(_) => doc.counts.unchanged += 1,
                }
                seen.insert(record.id.clone(), (hash.clone(), false));
                out.push(StoredRecord {
                    id: record.id,
                    profile: profile.name.clone(),
                    body: line.into_bytes(),
                    content_hash: hash,
                    last_seen_sequence: doc.sequence,
                    deleted: false,
                });
            }
            self.store.put_records(Area::Staging, &out).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn check_counts(&self, doc: &mut IngestionDocument, profile: &IngestionProfile) -> std::result::Result<(), String> {
        let live: Vec<StoredRecord> = self
            .store
            .records(Area::Staging, Some(&profile.name))
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|r| !r.deleted)
            .collect();
        doc.counts.deleted = live.iter().filter(|r| r.last_seen_sequence < doc.sequence).count() as u64;
        let earlier: Vec<IngestionDocument> = self
            .store
            .runs(Some(&profile.name))
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|d| d.sequence < doc.sequence)
            .collect();
        let first_run = !earlier.iter().any(|d| d.status(Task::Save) == TaskStatus::Complete);
        let baseline = if earlier.iter().any(|d| d.promoted_at.is_some()) {
            self.store
                .records(Area::Production, Some(&profile.name))
                .map_err(|e| e.to_string())?
                .iter()
                .filter(|r| !r.deleted)
                .count() as u64
        } else {
            doc.baseline.unwrap_or(0)
        };
        doc.baseline = Some(baseline);
        doc.alerts.clear();
        for (metric, value, threshold) in exceeded_thresholds(&doc.counts, baseline, &profile.thresholds, first_run) {
            let alert = Alert {
                timestamp: timestamp(),
                profile: profile.name.clone(),
                run_id: doc.run_id.clone(),
                metric,
                value,
                threshold,
                contact: profile.alert_contact.clone(),
            };
            self.alerts.emit(&alert).map_err(|e| format!("alert sink: {e}"))?;
            doc.alerts.push(alert);
        }
        Ok(())
    }

    fn remove_deleted(&self, doc: &mut IngestionDocument) -> std::result::Result<(), String> {
        let flagged: HashSet<String> = match &doc.staging.tombstones {
            Some(name) => read_lines(&self.run_dir(doc).join(name))
                .map_err(|e| e.to_string())?
                .iter()
                .filter_map(|l| serde_json::from_str::<Value>(l).ok())
                .filter_map(|v| v.get("localId").and_then(Value::as_str).map(|l| mint_record_id(&doc.profile_name, l)))
                .collect(),
            None => HashSet::new(),
        };
        let gone: Vec<StoredRecord> = self
            .store
            .records(Area::Staging, Some(&doc.profile_name))
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter(|r| !r.deleted && (r.last_seen_sequence < doc.sequence || flagged.contains(&r.id)))
            .map(|r| StoredRecord { deleted: true, ..r })
            .collect();
        self.store.put_records(Area::Staging, &gone).map_err(|e| e.to_string())?;
        doc.counts.tombstoned = gone.len() as u64;
        Ok(())
    }

    fn cleanup(&self, doc: &IngestionDocument) -> std::result::Result<(), String> {
        let runs = self.store.runs(Some(&doc.profile_name)).map_err(|e| e.to_string())?;
        let keep = self.config.keep_runs;
        if runs.len() <= keep {
            return Ok(());
        }
        let _g = self.lock();
        for mut old in runs[..runs.len() - keep].iter().cloned() {
            let dir = self.run_dir(&old);
            for sub in ["fetch", "enrich"] {
                let p = dir.join(sub);
                if p.exists() {
                    fs::remove_dir_all(&p).map_err(|e| e.to_string())?;
                }
            }
            if !old.staging.fetch_batches.is_empty() || !old.staging.enrich_batches.is_empty() {
                old.staging.fetch_batches.clear();
                old.staging.enrich_batches.clear();
                self.store.put_run(&old).map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // After a run

    /// Replaces the profile's production records with its staging records.
    /// Only the newest complete run of a profile can be promoted.
    pub fn promote(&self, run_id: &str) -> Result<IngestionDocument> {
        let _g = self.lock();
        let mut doc = self.run(run_id)?;
        if !doc.is_complete() {
            return Err(EngineError::Conflict(format!("run {run_id} is not complete")));
        }
        let newer = self.store.runs(Some(&doc.profile_name))?.into_iter().find(|d| d.sequence > doc.sequence && d.is_complete());
        if let Some(newer) = newer {
            return Err(EngineError::Conflict(format!("run {} is newer than {run_id}", newer.run_id)));
        }
        self.store.promote(&doc.profile_name)?;
        if doc.promoted_at.is_none() {
            doc.promoted_at = Some(timestamp());
            self.store.put_run(&doc)?;
        }
        Ok(doc)
    }

    /// Writes `patches.jsonl`: per record, the enrichment mutations as
    /// `{localId, id, patches}` lines. Records without any are omitted.
    pub fn export_patches(&self, run_id: &str) -> Result<PatchSummary> {
        let doc = self.run(run_id)?;
        if doc.status(Task::Enrich) != TaskStatus::Complete {
            return Err(EngineError::Conflict(format!("run {run_id} has not been enriched")));
        }
        let path = self.run_dir(&doc).join("patches.jsonl");
        let mut out = BufWriter::new(File::create(&path)?);
        let mut summary = PatchSummary { path: path.display().to_string(), records: 0, entries: 0 };
        for record in self.enriched_records(&doc)? {
            let patches: Vec<Value> = record
                .provenance
                .iter()
                .filter(|p| self.registry.kind_of(&p.step_name).is_none_or(|k| k == StepKind::Enrichment))
                .map(|p| {
                    serde_json::json!({
                        "stepName": p.step_name,
                        "fieldPath": p.field_path,
                        "action": p.action,
                        "priorValue": p.prior_value,
                        "newValue": p.new_value,
                    })
                })
                .collect();
            if patches.is_empty() {
                continue;
            }
            summary.records += 1;
            summary.entries += patches.len() as u64;
            let line = serde_json::json!({"localId": record.local_id, "id": record.id, "patches": patches});
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(summary)
    }

    /// Gzipped JSON-LD lines of the live production records of `profile`,
    /// or of every profile. Returns the line count.
    pub fn dump(&self, profile: Option<&str>, out: &Path) -> Result<u64> {
        if let Some(p) = profile {
            self.profile(p)?;
        }
        let mut records = self.store.records(Area::Production, profile)?;
        records.retain(|r| !r.deleted);
        records.sort_by(|a, b| (&a.profile, &a.id).cmp(&(&b.profile, &b.id)));
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut gz = GzEncoder::new(BufWriter::new(File::create(out)?), Compression::default());
        for r in &records {
            gz.write_all(&r.body)?;
            gz.write_all(b"\n")?;
        }
        gz.finish()?.flush()?;
        Ok(records.len() as u64)
    }

    pub fn default_dump_path(&self, profile: Option<&str>) -> PathBuf {
        self.config.data_dir.join("dumps").join(format!("{}.jsonl.gz", profile.unwrap_or("all")))
    }

    /// Live records whose text contains `q` (case-insensitive), in `field`
    /// or in any source-resource field.
    pub fn search_records(&self, query: &RecordQuery) -> Result<Vec<Value>> {
        let area = match query.area.as_deref() {
            None => Area::Staging,
            Some(a) => Area::parse(a).ok_or_else(|| EngineError::BadRequest(format!("unknown area {a:?}")))?,
        };
        if let Some(f) = &query.field {
            if !confluence_core::model::is_known_field_path(&confluence_core::model::strip_indices(f)) {
                return Err(EngineError::BadRequest(format!("unknown field {f:?}")));
            }
        }
        let needle = query.q.as_deref().unwrap_or("").to_lowercase();
        let limit = query.limit.unwrap_or(100);
        let mut out = Vec::new();
        for r in self.store.records(area, query.profile.as_deref())? {
            if r.deleted {
                continue;
            }
            let value: Value = serde_json::from_slice(&r.body).map_err(|e| EngineError::Io(e.to_string()))?;
            let texts = match &query.field {
                Some(f) => leaf_strings(&value, f),
                None => leaf_strings(&value, "sourceResource"),
            };
            if needle.is_empty() || texts.iter().any(|t| t.to_lowercase().contains(&needle)) {
                out.push(value);
                if out.len() >= limit {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// The raw, enriched and outcome data for `record_id` in a run.
    pub fn run_record(&self, run_id: &str, record_id: &str) -> Result<RunRecord> {
        let doc = self.run(run_id)?;
        let dir = self.run_dir(&doc);
        let mut found = RunRecord { id: record_id.to_owned(), raw: None, record: None, outcomes: Vec::new() };
        for batch in &doc.staging.fetch_batches {
            for line in read_lines(&dir.join(batch))? {
                let raw: RawRecord = serde_json::from_str(&line).map_err(|e| EngineError::Io(e.to_string()))?;
                if mint_record_id(&doc.profile_name, &raw.local_id) == record_id {
                    found.raw = Some(raw);
                }
            }
        }
        for batch in &doc.staging.enrich_batches {
            let records = read_lines(&dir.join(batch))?;
            let outcomes = read_lines(&dir.join(batch.replace(".jsonl", ".outcomes.jsonl"))).unwrap_or_default();
            for (i, line) in records.iter().enumerate() {
                let value: Value = serde_json::from_str(line).map_err(|e| EngineError::Io(e.to_string()))?;
                if value.get("@id").and_then(Value::as_str) == Some(record_id) {
                    found.record = Some(value);
                    if let Some(o) = outcomes.get(i).and_then(|l| serde_json::from_str::<OutcomeLine>(l).ok()) {
                        found.outcomes = o.outcomes;
                    }
                }
            }
        }
        if found.raw.is_none() && found.record.is_none() {
            return Err(EngineError::NotFound(format!("record {record_id:?} in run {run_id}")));
        }
        Ok(found)
    }

    /// Harvested records staged by the run's fetch task.
    pub fn fetched_records(&self, doc: &IngestionDocument) -> Result<Vec<RawRecord>> {
        let dir = self.run_dir(doc);
        let mut out = Vec::new();
        for batch in &doc.staging.fetch_batches {
            for line in read_lines(&dir.join(batch))? {
                out.push(serde_json::from_str(&line).map_err(|e| EngineError::Io(format!("{batch}: {e}")))?);
            }
        }
        Ok(out)
    }

    /// Records written by the run's enrich task.
    pub fn enriched_records(&self, doc: &IngestionDocument) -> Result<Vec<MapRecord>> {
        let dir = self.run_dir(doc);
        let mut out = Vec::new();
        for batch in &doc.staging.enrich_batches {
            for line in read_lines(&dir.join(batch))? {
                out.push(parse_jsonld(line.as_bytes()).map_err(|e| EngineError::Io(format!("{batch}: {e}")))?);
            }
        }
        Ok(out)
    }
}

/// The placeholder saved for a record whose id selection or mapping failed.
/// It has no title or rights, so validation excludes it.
fn stub_record(profile: &str, local_id: &str) -> MapRecord {
    MapRecord {
        id: mint_record_id(profile, local_id),
        local_id: local_id.to_owned(),
        profile_name: profile.to_owned(),
        ..MapRecord::default()
    }
}

pub fn read_lines(path: &Path) -> std::io::Result<Vec<String>> {
    BufReader::new(File::open(path)?).lines().filter(|l| l.as_ref().map_or(true, |s| !s.is_empty())).collect()
}

/// Splits lines across `prefix/batch-NNNNN.jsonl` files of at most `size`
/// lines each. No file is created for zero lines.
struct BatchWriter {
    dir: PathBuf,
    prefix: &'static str,
    size: usize,
    current: Option<BufWriter<File>>,
    in_current: usize,
    names: Vec<String>,
}

impl BatchWriter {
    fn new(dir: PathBuf, prefix: &'static str, size: usize) -> Self {
        Self { dir, prefix, size: size.max(1), current: None, in_current: 0, names: Vec::new() }
    }

    fn write(&mut self, line: &str) -> std::io::Result<()> {
        if self.current.is_none() || self.in_current >= self.size {
            if let Some(mut f) = self.current.take() {
                f.flush()?;
            }
            let file = format!("batch-{:05}.jsonl", self.names.len() + 1);
            self.current = Some(BufWriter::new(File::create(self.dir.join(&file))?));
            self.names.push(format!("{}/{file}", self.prefix));
            self.in_current = 0;
        }
        let f = self.current.as_mut().expect("batch file is open");
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        self.in_current += 1;
        Ok(())
    }

    fn finish(mut self) -> std::io::Result<Vec<String>> {
        if let Some(mut f) = self.current.take() {
            f.flush()?;
        }
        Ok(self.names)
    }
}
