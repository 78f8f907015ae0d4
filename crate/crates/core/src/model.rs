//! The metadata application profile: `SourceResource`, `Aggregation`,
//! `Place` and the record envelope, plus validation at the level of
//! cardinality checks and controlled-value verification.
//!
//! Field paths used throughout the crate (provenance, validation, reports)
//! are slash-delimited paths into the record's JSON view with zero-based
//! list indices: `sourceResource/subject/3`, `aggregation/preview`.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::hash;
use crate::vocab::Vocabularies;

/// Reference to the shipped JSON-LD context document (`data/context/map-v1.jsonld`).
pub const CONTEXT_IRI: &str = "https://confluence.example.org/context/map-v1.jsonld";
pub const CONTEXT_DOCUMENT: &str = include_str!("../data/context/map-v1.jsonld");
pub const RECORD_TYPE: &str = "ore:Aggregation";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SourceResource {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub title: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rights: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub creator: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contributor: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub publisher: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub description: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extent: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub format: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub identifier: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relation: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subject: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub date: Vec<TemporalSpan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spatial: Vec<Place>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub language: Vec<LanguageTerm>,
    #[serde(rename = "type", default, skip_serializing_if = "Vec::is_empty")]
    pub dcmi_type: Vec<DcmiType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collection: Vec<CollectionRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub has_type: Vec<String>,
    /// Holding field for unclassified `dc:coverage` values; emptied by
    /// coverage classification.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<String>,
}

/// The plain-text list fields of [`SourceResource`], by JSON name.
pub const TEXT_LIST_FIELDS: [&str; 13] = [
    "title",
    "rights",
    "creator",
    "contributor",
    "publisher",
    "description",
    "extent",
    "format",
    "identifier",
    "relation",
    "subject",
    "hasType",
    "coverage",
];

impl SourceResource {
    /// Mutable access to a plain-text list field by JSON name. `type` is
    /// included since DCMI type values are plain strings until reconciled.
    pub fn text_list_mut(&mut self, field: &str) -> Option<TextList<'_>> {
        Some(match field {
            "title" => TextList::Plain(&mut self.title),
            "rights" => TextList::Plain(&mut self.rights),
            "creator" => TextList::Plain(&mut self.creator),
            "contributor" => TextList::Plain(&mut self.contributor),
            "publisher" => TextList::Plain(&mut self.publisher),
            "description" => TextList::Plain(&mut self.description),
            "extent" => TextList::Plain(&mut self.extent),
            "format" => TextList::Plain(&mut self.format),
            "identifier" => TextList::Plain(&mut self.identifier),
            "relation" => TextList::Plain(&mut self.relation),
            "subject" => TextList::Plain(&mut self.subject),
            "hasType" => TextList::Plain(&mut self.has_type),
            "coverage" => TextList::Plain(&mut self.coverage),
            "type" => TextList::Types(&mut self.dcmi_type),
            _ => return None,
        })
    }
}

/// A list field whose members are plain strings.
pub enum TextList<'a> {
    Plain(&'a mut Vec<String>),
    Types(&'a mut Vec<DcmiType>),
}

impl TextList<'_> {
    /// Applies `f` to the list as plain strings.
    pub fn edit(self, f: impl FnOnce(Vec<String>) -> Vec<String>) {
        match self {
            TextList::Plain(v) => {
                let taken = core::mem::take(v);
                *v = f(taken);
            }
            TextList::Types(v) => {
                let taken = core::mem::take(v).into_iter().map(|t| t.0).collect();
                *v = f(taken).into_iter().map(DcmiType).collect();
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Aggregation {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub data_provider: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub provider: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_provider: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub is_shown_at: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub preview: String,
    /// `edm:rights`: a rights statement URI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rights_uri: Option<String>,
    /// Reference to the staged source record this record was mapped from.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub original_record: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLevel {
    Country,
    State,
    County,
    City,
    #[default]
    Unmatched,
}

impl MatchLevel {
    pub fn is_unmatched(&self) -> bool {
        *self == MatchLevel::Unmatched
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MatchLevel::Country => "country",
            MatchLevel::State => "state",
            MatchLevel::County => "county",
            MatchLevel::City => "city",
            MatchLevel::Unmatched => "unmatched",
        }
    }
}

/// Latitude/longitude in degrees. Serialized as the string `"lat, lon"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinates {
    lat: f64,
    lon: f64,
}

impl Coordinates {
    pub fn new(lat: f64, lon: f64) -> Option<Self> {
        ((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)).then_some(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for Coordinates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.lat, self.lon)
    }
}

impl core::str::FromStr for Coordinates {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lat, lon) = s.split_once(',').ok_or("coordinates must be \"lat, lon\"")?;
        let lat: f64 = lat.trim().parse().map_err(|_| "latitude is not a number")?;
        let lon: f64 = lon.trim().parse().map_err(|_| "longitude is not a number")?;
        Coordinates::new(lat, lon).ok_or("coordinates out of range")
    }
}

impl Serialize for Coordinates {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Coordinates {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Place {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Display form; required for the place to render.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub pref_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Coordinates>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub county: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "MatchLevel::is_unmatched")]
    pub match_level: MatchLevel,
}

impl Place {
    pub fn named(name: impl Into<String>) -> Self {
        let name = name.into();
        Self { pref_label: name.clone(), name, ..Self::default() }
    }

    /// True when any field other than `prefLabel` carries data.
    pub fn has_content(&self) -> bool {
        !self.name.is_empty()
            || self.coordinates.is_some()
            || self.city.is_some()
            || self.county.is_some()
            || self.state.is_some()
            || self.country.is_some()
    }
}

/// A normalized date or date range. `begin`/`end` are ISO 8601 at year,
/// month or day precision; both are absent when the display text could not
/// be parsed. `displayDate` is always the source text, verbatim.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TemporalSpan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub begin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    pub display_date: String,
}

impl TemporalSpan {
    pub fn unparsed(display: impl Into<String>) -> Self {
        Self { begin: None, end: None, display_date: display.into() }
    }
}

/// A language statement. Until reconciled, `code` is empty and `label` holds
/// the source value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LanguageTerm {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub code: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

/// A `dc:type` value; valid when it is one of the twelve DCMI terms.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DcmiType(pub String);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CollectionRef {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProvenanceAction {
    Add,
    Modify,
    Delete,
}

/// One field mutation performed by a pipeline step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProvenanceEntry {
    pub step_name: String,
    pub params_hash: String,
    pub field_path: String,
    pub action: ProvenanceAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_value: Option<String>,
    pub run_sequence: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MapRecord {
    pub id: String,
    pub local_id: String,
    pub profile_name: String,
    #[serde(default)]
    pub source_resource: SourceResource,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<ProvenanceEntry>,
    #[serde(default)]
    pub ingestion_sequence: u64,
}

/// Keys of the record body that are run metadata rather than content.
pub const ADMIN_FIELDS: [&str; 3] = ["provenance", "ingestionSequence", "profileName"];

impl MapRecord {
    /// The record as a JSON object without its admin fields. This is the
    /// value field paths address and the input to the content hash.
    pub fn content_view(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("records always serialize");
        if let Value::Object(map) = &mut v {
            for key in ADMIN_FIELDS {
                map.remove(key);
            }
        }
        v
    }

    /// 128-bit hash of the canonical content view, as 32 hex characters.
    pub fn content_hash(&self) -> String {
        hash::hex128(hash::hash128(&hash::canonical_json(&self.content_view())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JsonLdError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record is not a JSON object")]
    NotAnObject,
    #[error("unexpected @context {0}")]
    Context(String),
    #[error("missing @id")]
    MissingId,
}

/// Canonical JSON-LD serialization: the fixed `@context` reference, sorted
/// keys, no insignificant whitespace, UTF-8.
pub fn serialize_jsonld(record: &MapRecord) -> Vec<u8> {
    hash::canonical_json(&jsonld_value(record))
}

pub fn jsonld_value(record: &MapRecord) -> Value {
    let mut map = match serde_json::to_value(record).expect("records always serialize") {
        Value::Object(map) => map,
        _ => unreachable!("records serialize as objects"),
    };
    let id = map.remove("id").unwrap_or(Value::String(String::new()));
    map.insert("@context".into(), Value::String(CONTEXT_IRI.into()));
    map.insert("@id".into(), id);
    map.insert("@type".into(), Value::String(RECORD_TYPE.into()));
    Value::Object(map)
}

pub fn parse_jsonld(bytes: &[u8]) -> Result<MapRecord, JsonLdError> {
    let value: Value = serde_json::from_slice(bytes)?;
    from_jsonld_value(value)
}

pub fn from_jsonld_value(value: Value) -> Result<MapRecord, JsonLdError> {
    let mut map: Map<String, Value> = match value {
        Value::Object(map) => map,
        _ => return Err(JsonLdError::NotAnObject),
    };
    match map.remove("@context") {
        Some(Value::String(ctx)) if ctx == CONTEXT_IRI => {}
        other => return Err(JsonLdError::Context(format!("{other:?}"))),
    }
    map.remove("@type");
    let id = map.remove("@id").ok_or(JsonLdError::MissingId)?;
    map.insert("id".into(), id);
    Ok(serde_json::from_value(Value::Object(map))?)
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    MissingRequired,
    BadCardinality,
    NotInVocabulary,
    MalformedUri,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::MissingRequired => "missing-required",
            Rule::BadCardinality => "bad-cardinality",
            Rule::NotInVocabulary => "not-in-vocabulary",
            Rule::MalformedUri => "malformed-uri",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub field_path: String,
    pub rule: Rule,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub record_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fields required unless a profile overrides the set.
pub const DEFAULT_REQUIRED: [&str; 6] = [
    "sourceResource/title",
    "sourceResource/rights",
    "aggregation/dataProvider",
    "aggregation/provider",
    "aggregation/isShownAt",
    "aggregation/preview",
];

/// Every addressable field of a record's content view (list members and
/// nested object fields are addressed below these).
pub const FIELD_PATHS: &[&str] = &[
    "id",
    "localId",
    "sourceResource/title",
    "sourceResource/rights",
    "sourceResource/creator",
    "sourceResource/contributor",
    "sourceResource/publisher",
    "sourceResource/description",
    "sourceResource/extent",
    "sourceResource/format",
    "sourceResource/identifier",
    "sourceResource/relation",
    "sourceResource/subject",
    "sourceResource/date",
    "sourceResource/date/begin",
    "sourceResource/date/end",
    "sourceResource/date/displayDate",
    "sourceResource/spatial",
    "sourceResource/spatial/name",
    "sourceResource/spatial/prefLabel",
    "sourceResource/spatial/coordinates",
    "sourceResource/spatial/city",
    "sourceResource/spatial/county",
    "sourceResource/spatial/state",
    "sourceResource/spatial/country",
    "sourceResource/spatial/matchLevel",
    "sourceResource/language",
    "sourceResource/language/code",
    "sourceResource/language/label",
    "sourceResource/type",
    "sourceResource/collection",
    "sourceResource/collection/id",
    "sourceResource/collection/title",
    "sourceResource/hasType",
    "sourceResource/coverage",
    "aggregation/dataProvider",
    "aggregation/provider",
    "aggregation/intermediateProvider",
    "aggregation/isShownAt",
    "aggregation/preview",
    "aggregation/rightsUri",
    "aggregation/originalRecord",
];

/// True when `path` (with any numeric index segments removed) names a field
/// in [`FIELD_PATHS`].
pub fn is_known_field_path(path: &str) -> bool {
    let stripped = strip_indices(path);
    FIELD_PATHS.contains(&stripped.as_str())
}

/// Removes numeric index segments: `sourceResource/date/0/begin` becomes
/// `sourceResource/date/begin`.
pub fn strip_indices(path: &str) -> String {
    path.split('/')
        .filter(|s| s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()))
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0} cannot be a required field")]
pub struct UnknownFieldError(pub String);

/// Checks records against the required-field set and the bundled
/// vocabularies. Never mutates; deterministic.
#[derive(Clone, Debug)]
pub struct Validator {
    required: Vec<String>,
}

impl Default for Validator {
    fn default() -> Self {
        Self { required: DEFAULT_REQUIRED.iter().map(|s| (*s).to_owned()).collect() }
    }
}

impl Validator {
    /// A validator with `required` replacing the default required set.
    pub fn with_required<I, S>(required: I) -> Result<Self, UnknownFieldError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for field in required {
            let field = field.into();
            if !FIELD_PATHS.contains(&field.as_str()) || field.matches('/').count() != 1 {
                return Err(UnknownFieldError(field));
            }
            set.insert(field);
        }
        // keep the default order for the fields it shares
        let mut ordered: Vec<String> =
            DEFAULT_REQUIRED.iter().filter(|f| set.remove(**f)).map(|f| (*f).to_owned()).collect();
        ordered.extend(set);
        Ok(Self { required: ordered })
    }

    pub fn required(&self) -> &[String] {
        &self.required
    }

    pub fn validate(&self, record: &MapRecord) -> ValidationReport {
        let vocab = Vocabularies::bundled();
        let view = record.content_view();
        let mut violations = Vec::new();
        let mut push = |path: &str, rule: Rule, message: String| {
            violations.push(Violation { field_path: path.to_owned(), rule, message });
        };

        for field in &self.required {
            if !has_value(lookup(&view, field)) {
                push(field, Rule::MissingRequired, format!("{field} is required"));
            }
        }

        let sr = &record.source_resource;
        let text_lists: [(&str, Vec<&str>); 14] = [
            ("title", sr.title.iter().map(String::as_str).collect()),
            ("rights", sr.rights.iter().map(String::as_str).collect()),
            ("creator", sr.creator.iter().map(String::as_str).collect()),
            ("contributor", sr.contributor.iter().map(String::as_str).collect()),
            ("publisher", sr.publisher.iter().map(String::as_str).collect()),
            ("description", sr.description.iter().map(String::as_str).collect()),
            ("extent", sr.extent.iter().map(String::as_str).collect()),
            ("format", sr.format.iter().map(String::as_str).collect()),
            ("identifier", sr.identifier.iter().map(String::as_str).collect()),
            ("relation", sr.relation.iter().map(String::as_str).collect()),
            ("subject", sr.subject.iter().map(String::as_str).collect()),
            ("hasType", sr.has_type.iter().map(String::as_str).collect()),
            ("coverage", sr.coverage.iter().map(String::as_str).collect()),
            ("type", sr.dcmi_type.iter().map(|t| t.0.as_str()).collect()),
        ];
        for (name, values) in &text_lists {
            let path = format!("sourceResource/{name}");
            if values.iter().any(|v| v.is_empty()) {
                push(&path, Rule::BadCardinality, format!("{path} contains an empty value"));
            }
            let mut seen = BTreeSet::new();
            if let Some(dup) = values.iter().find(|v| !v.is_empty() && !seen.insert(**v)) {
                push(&path, Rule::BadCardinality, format!("{path} repeats {dup:?}"));
            }
        }

        for t in &sr.dcmi_type {
            if !Vocabularies::is_dcmi_term(&t.0) {
                push("sourceResource/type", Rule::NotInVocabulary, format!("{:?} is not a DCMI type", t.0));
            }
        }
        for (i, lang) in sr.language.iter().enumerate() {
            if !vocab.is_iso639_3(&lang.code) {
                push(
                    "sourceResource/language/code",
                    Rule::NotInVocabulary,
                    format!("language {i}: {:?} is not an ISO 639-3 code", lang.code),
                );
            }
        }
        for (i, place) in sr.spatial.iter().enumerate() {
            if place.pref_label.is_empty() && place.has_content() {
                push(
                    "sourceResource/spatial/prefLabel",
                    Rule::MissingRequired,
                    format!("place {i} ({:?}) has no prefLabel", place.name),
                );
            }
        }

        let agg = &record.aggregation;
        if let Some(ip) = &agg.intermediate_provider {
            if ip == &agg.provider || ip == &agg.data_provider {
                push(
                    "aggregation/intermediateProvider",
                    Rule::BadCardinality,
                    format!("intermediateProvider {ip:?} duplicates a provider"),
                );
            }
        }
        for (path, value) in [
            ("aggregation/isShownAt", Some(&agg.is_shown_at)),
            ("aggregation/preview", Some(&agg.preview)),
            ("aggregation/rightsUri", agg.rights_uri.as_ref()),
        ] {
            if let Some(v) = value.filter(|v| !v.is_empty()) {
                if !is_http_uri(v) {
                    push(path, Rule::MalformedUri, format!("{v:?} is not an absolute http(s) URI"));
                }
            }
        }

        ValidationReport { record_id: record.id.clone(), violations }
    }
}

/// Looks up a slash path in a JSON value. Numeric segments index arrays; a
/// non-numeric segment applied to an array collects from every member.
pub fn lookup<'a>(value: &'a Value, path: &str) -> Vec<&'a Value> {
    let mut current = alloc::vec![value];
    for segment in path.split('/').filter(|s| !s.is_empty()) {
        let mut next = Vec::new();
        for v in current {
            match v {
                Value::Object(map) => next.extend(map.get(segment)),
                Value::Array(items) => match segment.parse::<usize>() {
                    Ok(i) => next.extend(items.get(i)),
                    Err(_) => next.extend(items.iter().filter_map(|item| item.get(segment))),
                },
                _ => {}
            }
        }
        current = next;
    }
    current
}

fn has_value(found: Vec<&Value>) -> bool {
    found.into_iter().any(|v| match v {
        Value::Null => false,
        Value::String(s) => !s.is_empty(),
        Value::Array(items) => items.iter().any(|i| has_value(alloc::vec![i])),
        Value::Object(map) => !map.is_empty(),
        _ => true,
    })
}

/// Flattens every scalar under `path` into strings, descending through
/// lists, in document order.
pub fn leaf_strings(value: &Value, path: &str) -> Vec<String> {
    let mut out = Vec::new();
    for v in lookup(value, path) {
        collect_leaves(v, &mut out);
    }
    out
}

fn collect_leaves(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Null => {}
        Value::String(s) => out.push(s.clone()),
        Value::Array(items) => items.iter().for_each(|i| collect_leaves(i, out)),
        Value::Object(_) => out.push(hash::canonical_json(v).into_iter().map(char::from).collect()),
        other => out.push(other.to_string()),
    }
}

/// Absolute `http://` or `https://` URI with a non-empty authority and no
/// whitespace or control characters.
pub fn is_http_uri(s: &str) -> bool {
    let rest = match s.strip_prefix("https://").or_else(|| s.strip_prefix("http://")) {
        Some(rest) => rest,
        None => return false,
    };
    let authority = rest.split(['/', '?', '#']).next().unwrap_or("");
    let host = authority.rsplit('@').next().unwrap_or("");
    let host = host.split(':').next().unwrap_or("");
    !host.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn valid_record() -> MapRecord {
        MapRecord {
            id: hash::mint_record_id("demo", "oai:demo:1"),
            local_id: "oai:demo:1".into(),
            profile_name: "demo".into(),
            source_resource: SourceResource {
                title: alloc::vec!["Main Street".into()],
                rights: alloc::vec!["Public domain".into()],
                dcmi_type: alloc::vec![DcmiType("Image".into())],
                language: alloc::vec![LanguageTerm { code: "eng".into(), label: "English".into() }],
                spatial: alloc::vec![Place::named("Charlotte (NC)")],
                ..SourceResource::default()
            },
            aggregation: Aggregation {
                data_provider: "UNT Libraries".into(),
                provider: "The Portal to Texas History".into(),
                is_shown_at: "https://texashistory.unt.edu/ark:/67531/metapth1/".into(),
                preview: "https://texashistory.unt.edu/ark:/67531/metapth1/thumbnail/".into(),
                ..Aggregation::default()
            },
            provenance: Vec::new(),
            ingestion_sequence: 1,
        }
    }

    #[test]
    fn valid_record_has_no_violations() {
        let report = Validator::default().validate(&valid_record());
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn missing_preview_is_flagged() {
        let mut r = valid_record();
        r.aggregation.preview.clear();
        let report = Validator::default().validate(&r);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field_path, "aggregation/preview");
        assert_eq!(report.violations[0].rule, Rule::MissingRequired);
    }

    #[test]
    fn controlled_values() {
        let mut r = valid_record();
        r.source_resource.dcmi_type = alloc::vec![DcmiType("Dataset".into())];
        assert!(Validator::default().validate(&r).is_valid());
        r.source_resource.language[0].code = "zzz9".into();
        let report = Validator::default().validate(&r);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field_path, "sourceResource/language/code");
        assert_eq!(report.violations[0].rule, Rule::NotInVocabulary);
    }

    #[test]
    fn uri_and_provider_rules() {
        let mut r = valid_record();
        r.aggregation.is_shown_at = "texashistory.unt.edu/item".into();
        r.aggregation.intermediate_provider = Some(r.aggregation.provider.clone());
        let rules: Vec<_> =
            Validator::default().validate(&r).violations.into_iter().map(|v| (v.field_path, v.rule)).collect();
        assert_eq!(
            rules,
            [
                ("aggregation/intermediateProvider".to_string(), Rule::BadCardinality),
                ("aggregation/isShownAt".to_string(), Rule::MalformedUri),
            ]
        );
    }

    #[test]
    fn duplicates_and_empties_are_cardinality_violations() {
        let mut r = valid_record();
        r.source_resource.subject = alloc::vec!["Maps".into(), "Maps".into(), "".into()];
        let report = Validator::default().validate(&r);
        assert_eq!(report.violations.len(), 2);
        assert!(report.violations.iter().all(|v| v.rule == Rule::BadCardinality));
    }

    #[test]
    fn required_override() {
        let v = Validator::with_required(["sourceResource/title", "sourceResource/subject"]).unwrap();
        let mut r = valid_record();
        r.aggregation.preview.clear();
        let report = v.validate(&r);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].field_path, "sourceResource/subject");
        assert!(Validator::with_required(["sourceResource/nope"]).is_err());
    }

    #[test]
    fn jsonld_envelope_and_round_trip() {
        let r = valid_record();
        let bytes = serialize_jsonld(&r);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["@context"], CONTEXT_IRI);
        assert_eq!(v["@id"], Value::String(r.id.clone()));
        assert_eq!(parse_jsonld(&bytes).unwrap(), r);
    }

    #[test]
    fn content_hash_ignores_admin_fields() {
        let a = valid_record();
        let mut b = a.clone();
        b.ingestion_sequence = 9;
        b.provenance.push(ProvenanceEntry {
            step_name: "cleanup_values".into(),
            params_hash: "0".into(),
            field_path: "sourceResource/title/0".into(),
            action: ProvenanceAction::Modify,
            prior_value: Some("Main Street ".into()),
            new_value: Some("Main Street".into()),
            run_sequence: 0,
        });
        assert_eq!(a.content_hash(), b.content_hash());
        b.source_resource.title[0].push('!');
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn coordinates_string_form() {
        let c: Coordinates = "35.226944, -80.843333".parse().unwrap();
        assert_eq!(c.lat(), 35.226944);
        assert_eq!(c.to_string(), "35.226944, -80.843333");
        assert!("91, 0".parse::<Coordinates>().is_err());
    }

    #[test]
    fn uri_check() {
        assert!(is_http_uri("https://hub.example/thumbs/abc.jpg"));
        assert!(is_http_uri("http://a.b:8080/x?y#z"));
        assert!(!is_http_uri("ftp://a.b/"));
        assert!(!is_http_uri("https:///path"));
        assert!(!is_http_uri("https://a b/"));
    }
}
