//! Ingestion profiles: the per-source JSON documents that say how to harvest
//! a source and which pipeline to run over it.
//!
//! A profile's pipeline must start with exactly one id-selection step
//! followed by exactly one mapping step; both must stay enabled. The mapping
//! step's `provider` and `intermediateProvider` parameters are filled from
//! the profile when it is resolved.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{is_http_uri, UnknownFieldError, Validator};
use crate::pipeline::{BindError, Params, ResolvedStep, StepKind, StepRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IngestionProfile {
    pub name: String,
    pub provider_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_provider_name: Option<String>,
    pub harvest: HarvestSpec,
    pub pipeline: Vec<StepSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub alert_contact: String,
    #[serde(default)]
    pub schedule: Schedule,
    /// Replaces the default required-field set for validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_fields: Option<Vec<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarvestKind {
    Oai,
    File,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct HarvestSpec {
    pub kind: HarvestKind,
    /// OAI-PMH base URL, or a file glob.
    pub endpoint: String,
    #[serde(default = "default_prefix")]
    pub metadata_prefix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<String>>,
    /// Milliseconds between HTTP requests.
    #[serde(default)]
    pub request_delay: u64,
    /// File harvests: element whose children are individual records. Absent
    /// means one record per file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_element: Option<String>,
    /// File harvests: tree path of the local identifier within a record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_path: Option<String>,
}

fn default_prefix() -> String {
    "oai_dc".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StepSpec {
    pub step_name: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "added_default")]
    pub added_frac: f64,
    #[serde(default = "changed_default")]
    pub changed_frac: f64,
    #[serde(default = "deleted_default")]
    pub deleted_frac: f64,
}

fn added_default() -> f64 {
    1.0
}
fn changed_default() -> f64 {
    0.5
}
fn deleted_default() -> f64 {
    0.1
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { added_frac: added_default(), changed_frac: changed_default(), deleted_frac: deleted_default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Monthly,
    Bimonthly,
    Quarterly,
    #[default]
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("profile is not valid JSON: {0}")]
    Parse(String),
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("unknown step {0:?}")]
    UnknownStep(String),
    #[error("pipeline order: {0}")]
    Ordering(String),
    #[error("required step {0:?} may not be disabled")]
    RequiredDisabled(String),
    #[error("{0}")]
    Params(String),
}

impl ProfileError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ProfileError::Parse(_) => "parse",
            ProfileError::Schema(_) => "schema",
            ProfileError::UnknownStep(_) => "unknown-step",
            ProfileError::Ordering(_) => "ordering",
            ProfileError::RequiredDisabled(_) => "required-disabled",
            ProfileError::Params(_) => "params",
        }
    }
}

/// Parses and validates a profile document against `registry`.
pub fn load_profile(document: &[u8], registry: &StepRegistry) -> Result<IngestionProfile, ProfileError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| ProfileError::Parse(e.to_string()))?;
    let profile: IngestionProfile = serde_json::from_value(value).map_err(|e| ProfileError::Schema(e.to_string()))?;
    check_profile(&profile, registry)?;
    Ok(profile)
}

/// The invariants `load_profile` enforces, for profiles built in memory.
pub fn check_profile(p: &IngestionProfile, registry: &StepRegistry) -> Result<(), ProfileError> {
    let schema = |m: String| Err(ProfileError::Schema(m));
    if p.name.is_empty() || !p.name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-') {
        return schema(format!("name {:?} must match [a-z0-9_-]+", p.name));
    }
    if p.provider_name.trim().is_empty() {
        return schema("providerName is empty".into());
    }
    let t = p.thresholds;
    for (k, v) in [("addedFrac", t.added_frac), ("changedFrac", t.changed_frac), ("deletedFrac", t.deleted_frac)] {
        if !v.is_finite() || v < 0.0 {
            return schema(format!("thresholds.{k} must be a non-negative number"));
        }
    }
    let h = &p.harvest;
    match h.kind {
        HarvestKind::Oai => {
            if !is_http_uri(&h.endpoint) {
                return schema(format!("harvest.endpoint {:?} is not an http(s) URL", h.endpoint));
            }
            if h.metadata_prefix.is_empty() {
                return schema("harvest.metadataPrefix is empty".into());
            }
        }
        HarvestKind::File => {
            if h.endpoint.trim().is_empty() {
                return schema("harvest.endpoint (file glob) is empty".into());
            }
            match &h.id_path {
                Some(path) => {
                    crate::tree::TreePath::parse(path).map_err(|e| ProfileError::Schema(e.to_string()))?;
                }
                None => return schema("harvest.idPath is required for file harvests".into()),
            }
        }
    }
    if let Some(fields) = &p.required_fields {
        Validator::with_required(fields.iter().cloned())
            .map_err(|UnknownFieldError(f)| ProfileError::Schema(format!("requiredFields: {f} is not a record field")))?;
    }

    let mut kinds = Vec::with_capacity(p.pipeline.len());
    for spec in &p.pipeline {
        let kind = registry.kind_of(&spec.step_name).ok_or_else(|| ProfileError::UnknownStep(spec.step_name.clone()))?;
        kinds.push(kind);
    }
    let count = |k: StepKind| kinds.iter().filter(|x| **x == k).count();
    if count(StepKind::IdSelection) != 1 {
        return Err(ProfileError::Ordering("pipeline needs exactly one id-selection step".into()));
    }
    if count(StepKind::Mapping) != 1 {
        return Err(ProfileError::Ordering("pipeline needs exactly one mapping step".into()));
    }
    if kinds[0] != StepKind::IdSelection {
        return Err(ProfileError::Ordering("the id-selection step must come first".into()));
    }
    if kinds[1] != StepKind::Mapping {
        return Err(ProfileError::Ordering("the mapping step must follow id selection".into()));
    }
    for (spec, kind) in p.pipeline.iter().zip(&kinds) {
        if *kind != StepKind::Enrichment && !spec.enabled {
            return Err(ProfileError::RequiredDisabled(spec.step_name.clone()));
        }
    }
    for spec in &p.pipeline {
        bind(p, spec, registry)?;
    }
    Ok(())
}

fn bind(p: &IngestionProfile, spec: &StepSpec, registry: &StepRegistry) -> Result<ResolvedStep, ProfileError> {
    let mut params = spec.params.clone();
    if registry.kind_of(&spec.step_name) == Some(StepKind::Mapping) {
        params.insert("provider".into(), Value::String(p.provider_name.clone()));
        params
            .entry("intermediateProvider")
            .or_insert_with(|| Value::String(p.intermediate_provider_name.clone().unwrap_or_default()));
    }
    registry.bind(&spec.step_name, &params).map_err(|e| match e {
        BindError::UnknownStep(s) => ProfileError::UnknownStep(s),
        other => ProfileError::Params(other.to_string()),
    })
}

/// The enabled steps of `profile`, in order, bound to their implementations.
pub fn resolve_pipeline(profile: &IngestionProfile, registry: &StepRegistry) -> Result<Vec<ResolvedStep>, ProfileError> {
    check_profile(profile, registry)?;
    profile.pipeline.iter().filter(|s| s.enabled).map(|s| bind(profile, s, registry)).collect()
}

impl IngestionProfile {
    pub fn validator(&self) -> Validator {
        match &self.required_fields {
            Some(fields) => Validator::with_required(fields.iter().cloned()).unwrap_or_default(),
            None => Validator::default(),
        }
    }

    /// The `idPath` the profile's id-selection step uses.
    pub fn id_path(&self, registry: &StepRegistry) -> Option<String> {
        let spec = self.pipeline.iter().find(|s| registry.kind_of(&s.step_name) == Some(StepKind::IdSelection))?;
        let bound = bind(self, spec, registry).ok()?;
        bound.params.get("idPath").and_then(Value::as_str).map(ToOwned::to_owned)
    }

    /// Names of pipeline steps that are neither id selection nor mapping.
    pub fn enrichment_steps(&self, registry: &StepRegistry) -> Vec<String> {
        self.pipeline
            .iter()
            .filter(|s| registry.kind_of(&s.step_name) == Some(StepKind::Enrichment))
            .map(|s| s.step_name.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enrich::builtin_registry;
    use crate::geocode::Gazetteer;
    use alloc::sync::Arc;
    use serde_json::json;

    fn registry() -> StepRegistry {
        builtin_registry(Arc::new(Gazetteer::bundled().clone()))
    }

    pub(crate) fn sample() -> Value {
        json!({
            "name": "demo",
            "providerName": "Demo Hub",
            "harvest": {"kind": "oai", "endpoint": "http://127.0.0.1:9/oai", "metadataPrefix": "oai_dc"},
            "pipeline": [
                {"stepName": "select_id", "params": {"idPath": "header/identifier"}},
                {"stepName": "map", "params": {"mappingName": "oai_dc", "dataProvider": "Demo Library"}},
                {"stepName": "cleanup_values"},
                {"stepName": "shred"},
                {"stepName": "normalize_date", "enabled": false},
                {"stepName": "geocode", "enabled": false}
            ],
            "alertContact": "ops@example.org",
            "schedule": "monthly"
        })
    }

    fn load(v: &Value) -> Result<IngestionProfile, ProfileError> {
        load_profile(&serde_json::to_vec(v).unwrap(), &registry())
    }

    #[test]
    fn loads_in_order_and_resolves_enabled_steps() {
        let p = load(&sample()).unwrap();
        let names: Vec<_> = p.pipeline.iter().map(|s| s.step_name.as_str()).collect();
        assert_eq!(names, ["select_id", "map", "cleanup_values", "shred", "normalize_date", "geocode"]);
        let steps = resolve_pipeline(&p, &registry()).unwrap();
        let names: Vec<_> = steps.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["select_id", "map", "cleanup_values", "shred"]);
        assert_eq!(steps[1].params["provider"], "Demo Hub");
        assert_eq!(p.thresholds, Thresholds::default());
    }

    #[test]
    fn rejections() {
        let mut v = sample();
        v["pipeline"].as_array_mut().unwrap().remove(1);
        assert!(matches!(load(&v), Err(ProfileError::Ordering(_))));

        let mut v = sample();
        v["pipeline"][3]["stepName"] = json!("frobnicate");
        assert_eq!(load(&v), Err(ProfileError::UnknownStep("frobnicate".into())));

        for i in [0, 1] {
            let mut v = sample();
            v["pipeline"][i]["enabled"] = json!(false);
            assert!(matches!(load(&v), Err(ProfileError::RequiredDisabled(_))), "step {i}");
        }

        let mut v = sample();
        v["harvset"] = json!({});
        assert!(matches!(load(&v), Err(ProfileError::Schema(_))));

        let mut v = sample();
        v["harvest"].as_object_mut().unwrap().remove("kind");
        assert!(matches!(load(&v), Err(ProfileError::Schema(_))));

        let mut v = sample();
        v["name"] = json!("Demo Hub");
        assert!(matches!(load(&v), Err(ProfileError::Schema(_))));

        let mut v = sample();
        v["pipeline"][1]["params"]["mappingName"] = json!("marc");
        assert!(matches!(load(&v), Err(ProfileError::Params(_))));

        assert!(matches!(load_profile(b"{", &registry()), Err(ProfileError::Parse(_))));
    }
}
