//! The linear pipeline executor, the step registry and the envelope that
//! carries a record through the steps.
//!
//! Steps never report their own mutations. The executor runs each step on a
//! copy of the envelope, diffs the record view before and after, and appends
//! one [`ProvenanceEntry`] per changed leaf. A step that returns an error has
//! its copy discarded, so a failed step cannot leave partial edits behind.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::hash;
use crate::model::{MapRecord, ProvenanceEntry};
use crate::provenance;
use crate::tree::MetadataTree;

/// Step parameters after schema validation and default filling.
pub type Params = Map<String, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StepKind {
    /// Chooses the record's local identifier; runs first, on the raw tree.
    IdSelection,
    /// Crosswalk from the raw tree to a [`MapRecord`].
    Mapping,
    Enrichment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Mapped,
}

/// A harvested record before mapping.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RawContent {
    pub tree: MetadataTree,
    #[serde(default)]
    pub profile_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub local_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Content {
    Raw(RawContent),
    Mapped(MapRecord),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Applied,
    Skipped,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Applied => "applied",
            Status::Skipped => "skipped",
            Status::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StepOutcome {
    pub step_name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub duration_ms: u64,
    /// Values the step could not resolve (unparseable dates, unmatched
    /// languages, geocoding misses). Not a failure.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub unresolved: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

/// A record in flight, with the provenance and outcomes accumulated so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvelopeRepr", into = "EnvelopeRepr")]
pub struct Envelope {
    pub content: Content,
    pub provenance: Vec<ProvenanceEntry>,
    pub outcomes: Vec<StepOutcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EnvelopeRepr {
    stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<RawContent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    record: Option<MapRecord>,
    #[serde(default)]
    provenance: Vec<ProvenanceEntry>,
    #[serde(default)]
    outcomes: Vec<StepOutcome>,
}

impl TryFrom<EnvelopeRepr> for Envelope {
    type Error = &'static str;

    fn try_from(r: EnvelopeRepr) -> Result<Self, Self::Error> {
        let content = match (r.stage, r.raw, r.record) {
            (Stage::Raw, Some(raw), None) => Content::Raw(raw),
            (Stage::Mapped, None, Some(record)) => Content::Mapped(record),
            (Stage::Raw, ..) => return Err("a raw envelope carries exactly a `raw` member"),
            (Stage::Mapped, ..) => return Err("a mapped envelope carries exactly a `record` member"),
        };
        Ok(Envelope { content, provenance: r.provenance, outcomes: r.outcomes })
    }
}

impl From<Envelope> for EnvelopeRepr {
    fn from(e: Envelope) -> Self {
        let (stage, raw, record) = match e.content {
            Content::Raw(raw) => (Stage::Raw, Some(raw), None),
            Content::Mapped(record) => (Stage::Mapped, None, Some(record)),
        };
        EnvelopeRepr { stage, raw, record, provenance: e.provenance, outcomes: e.outcomes }
    }
}

impl Envelope {
    pub fn raw(tree: MetadataTree, profile_name: impl Into<String>) -> Self {
        Self::from_content(Content::Raw(RawContent { tree, profile_name: profile_name.into(), ..Default::default() }))
    }

    pub fn mapped(record: MapRecord) -> Self {
        Self::from_content(Content::Mapped(record))
    }

    fn from_content(content: Content) -> Self {
        Self { content, provenance: Vec::new(), outcomes: Vec::new() }
    }

    pub fn stage(&self) -> Stage {
        match self.content {
            Content::Raw(_) => Stage::Raw,
            Content::Mapped(_) => Stage::Mapped,
        }
    }

    pub fn record(&self) -> Option<&MapRecord> {
        match &self.content {
            Content::Mapped(r) => Some(r),
            Content::Raw(_) => None,
        }
    }

    /// The mapped record, or an error for a step that needs one.
    pub fn record_mut(&mut self) -> Result<&mut MapRecord, StepError> {
        match &mut self.content {
            Content::Mapped(r) => Ok(r),
            Content::Raw(_) => Err(StepError::new("step requires a mapped record")),
        }
    }

    pub fn raw_mut(&mut self) -> Result<&mut RawContent, StepError> {
        match &mut self.content {
            Content::Raw(r) => Ok(r),
            Content::Mapped(_) => Err(StepError::new("step requires a raw record")),
        }
    }

    pub fn local_id(&self) -> &str {
        match &self.content {
            Content::Raw(r) => &r.local_id,
            Content::Mapped(r) => &r.local_id,
        }
    }

    /// The value provenance paths address: `{id, localId}` before mapping,
    /// the record's content view after. Empty containers are pruned.
    pub fn view(&self) -> Value {
        let mut v = match &self.content {
            Content::Raw(raw) => {
                let mut map = Map::new();
                map.insert("id".into(), Value::String(raw.id.clone()));
                map.insert("localId".into(), Value::String(raw.local_id.clone()));
                map.retain(|_, v| v.as_str().is_some_and(|s| !s.is_empty()));
                Value::Object(map)
            }
            Content::Mapped(r) => r.content_view(),
        };
        provenance::prune(&mut v);
        v
    }

    /// The mapped record with the envelope's provenance attached.
    pub fn into_record(self) -> Option<MapRecord> {
        match self.content {
            Content::Mapped(mut r) => {
                r.provenance = self.provenance;
                Some(r)
            }
            Content::Raw(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepError(pub String);

impl StepError {
    pub fn new(message: impl Into<String>) -> Self {
        Self(message.into())
    }
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What a step says about a successful application. Whether it counts as
/// applied or skipped is decided by the executor's diff.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    pub message: Option<String>,
    pub unresolved: u32,
}

impl StepReport {
    pub fn note(message: impl Into<String>) -> Self {
        Self { message: Some(message.into()), unresolved: 0 }
    }

    pub fn unresolved(count: u32, message: impl Into<String>) -> Self {
        Self { message: (count > 0).then(|| message.into()), unresolved: count }
    }
}

pub trait Step: Send + Sync {
    fn kind(&self) -> StepKind {
        StepKind::Enrichment
    }

    /// One-line description for the step listing.
    fn describe(&self) -> &str {
        ""
    }

    /// Step-specific checks on already type-checked parameters.
    fn check_params(&self, _params: &Params) -> Result<(), String> {
        Ok(())
    }

    fn apply(&self, envelope: &mut Envelope, params: &Params) -> Result<StepReport, StepError>;
}

// ---------------------------------------------------------------------------
// Parameter schemas

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ParamType {
    String,
    Boolean,
    StringList,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    pub description: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub params: Vec<ParamSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("missing required parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} must be a {expected}")]
    Type { name: String, expected: &'static str },
    #[error("parameter {name:?}: {reason}")]
    Invalid { name: String, reason: String },
}

impl ParamSchema {
    pub fn new() -> Self {
        Self::default()
    }

    fn with(mut self, name: &str, ty: ParamType, required: bool, default: Option<Value>, description: &str) -> Self {
        self.params.push(ParamSpec { name: name.to_owned(), ty, required, default, description: description.to_owned() });
        self
    }

    pub fn required(self, name: &str, ty: ParamType, description: &str) -> Self {
        self.with(name, ty, true, None, description)
    }

    pub fn optional(self, name: &str, ty: ParamType, default: Value, description: &str) -> Self {
        self.with(name, ty, false, Some(default), description)
    }

    /// Checks `given` against the schema and fills defaults.
    pub fn resolve(&self, given: &Params) -> Result<Params, ParamError> {
        if let Some(unknown) = given.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(ParamError::Unknown(unknown.clone()));
        }
        let mut out = Params::new();
        for spec in &self.params {
            let value = match (given.get(&spec.name), &spec.default) {
                (Some(v), _) => v.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) if spec.required => return Err(ParamError::Missing(spec.name.clone())),
                (None, None) => continue,
            };
            let ok = match spec.ty {
                ParamType::String => value.is_string(),
                ParamType::Boolean => value.is_boolean(),
                ParamType::StringList => value.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
            };
            if !ok {
                let expected = match spec.ty {
                    ParamType::String => "string",
                    ParamType::Boolean => "boolean",
                    ParamType::StringList => "list of strings",
                };
                return Err(ParamError::Type { name: spec.name.clone(), expected });
            }
            out.insert(spec.name.clone(), value);
        }
        Ok(out)
    }
}

/// Reads a string parameter that the schema guarantees.
pub fn param_str<'a>(params: &'a Params, name: &str) -> &'a str {
    params.get(name).and_then(Value::as_str).unwrap_or("")
}

pub fn param_bool(params: &Params, name: &str) -> bool {
    params.get(name).and_then(Value::as_bool).unwrap_or(false)
}

pub fn param_list<'a>(params: &'a Params, name: &str) -> Vec<&'a str> {
    params.get(name).and_then(Value::as_array).map_or_else(Vec::new, |a| a.iter().filter_map(Value::as_str).collect())
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Clone)]
pub struct RegisteredStep {
    pub step: Arc<dyn Step>,
    pub schema: ParamSchema,
}

impl fmt::Debug for RegisteredStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredStep").field("kind", &self.step.kind()).field("schema", &self.schema).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("step {0:?} is already registered")]
pub struct DuplicateStep(pub String);

#[derive(Clone, Debug, Default)]
pub struct StepRegistry {
    steps: BTreeMap<String, RegisteredStep>,
}

impl StepRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, step: Arc<dyn Step>, schema: ParamSchema) -> Result<(), DuplicateStep> {
        if self.steps.contains_key(name) {
            return Err(DuplicateStep(name.to_owned()));
        }
        self.steps.insert(name.to_owned(), RegisteredStep { step, schema });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredStep> {
        self.steps.get(name)
    }

    pub fn kind_of(&self, name: &str) -> Option<StepKind> {
        self.get(name).map(|r| r.step.kind())
    }

    /// Registered steps in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &RegisteredStep)> {
        self.steps.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Binds `name` to its implementation with validated parameters.
    pub fn bind(&self, name: &str, params: &Params) -> Result<ResolvedStep, BindError> {
        let reg = self.get(name).ok_or_else(|| BindError::UnknownStep(name.to_owned()))?;
        let params = reg.schema.resolve(params).map_err(|e| BindError::Params(name.to_owned(), e))?;
        reg.step.check_params(&params).map_err(|reason| {
            BindError::Params(name.to_owned(), ParamError::Invalid { name: name.to_owned(), reason })
        })?;
        Ok(ResolvedStep::new(name, reg.step.clone(), params))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("unknown step {0:?}")]
    UnknownStep(String),
    #[error("step {0:?}: {1}")]
    Params(String, ParamError),
}

/// A step bound to its parameters, ready to run.
#[derive(Clone)]
pub struct ResolvedStep {
    pub name: String,
    pub step: Arc<dyn Step>,
    pub params: Params,
    pub params_hash: String,
}

impl fmt::Debug for ResolvedStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResolvedStep").field("name", &self.name).field("params", &self.params).finish()
    }
}

impl ResolvedStep {
    pub fn new(name: &str, step: Arc<dyn Step>, params: Params) -> Self {
        let params_hash = hash::params_hash(&Value::Object(params.clone()));
        Self { name: name.to_owned(), step, params, params_hash }
    }
}

// ---------------------------------------------------------------------------
// Execution

/// Millisecond clock for outcome durations.
pub trait Clock: Sync {
    fn now_ms(&self) -> u64;
}

/// A clock that always reads zero, for deterministic outcomes.
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> u64 {
        0
    }
}

/// Runs `steps` in order. Failures are recorded as outcomes; the envelope is
/// left as it was before the failing step and the remaining steps still run.
pub fn run_pipeline(mut envelope: Envelope, steps: &[ResolvedStep], clock: &dyn Clock) -> Envelope {
    for step in steps {
        apply_step(&mut envelope, step, clock);
    }
    envelope
}

/// Applies one step with the executor's failure isolation and provenance.
pub fn apply_step(envelope: &mut Envelope, step: &ResolvedStep, clock: &dyn Clock) -> Status {
    let before = envelope.view();
    let mut work = Envelope::from_content(envelope.content.clone());
    let start = clock.now_ms();
    let result = step.step.apply(&mut work, &step.params);
    let duration_ms = clock.now_ms().saturating_sub(start);
    let (status, message, unresolved) = match result {
        Err(e) => (Status::Failed, Some(e.0), 0),
        Ok(report) => {
            let after = work.view();
            let changes = provenance::diff(&before, &after);
            let stage_changed = work.stage() != envelope.stage();
            let status = if changes.is_empty() && !stage_changed { Status::Skipped } else { Status::Applied };
            for c in changes {
                let run_sequence = envelope.provenance.len() as u64;
                envelope.provenance.push(ProvenanceEntry {
                    step_name: step.name.clone(),
                    params_hash: step.params_hash.clone(),
                    field_path: c.field_path,
                    action: c.action,
                    prior_value: c.prior_value,
                    new_value: c.new_value,
                    run_sequence,
                });
            }
            envelope.content = work.content;
            (status, report.message, report.unresolved)
        }
    };
    envelope.outcomes.push(StepOutcome { step_name: step.name.clone(), status, message, duration_ms, unresolved });
    status
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Mapped => "mapped",
        })
    }
}

impl Status {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "applied" => Status::Applied,
            "skipped" => Status::Skipped,
            "failed" => Status::Failed,
            _ => return None,
        })
    }
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::IdSelection => "idSelection",
            StepKind::Mapping => "mapping",
            StepKind::Enrichment => "enrichment",
        }
    }
}
