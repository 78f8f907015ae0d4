//! The built-in step library.
//!
//! | step                  | kind          | params                                   |
//! |-----------------------|---------------|------------------------------------------|
//! | `select_id`           | id selection  | `idPath`                                 |
//! | `map`                 | mapping       | `mappingName`, `provider`, `dataProvider`, `intermediateProvider` |
//! | `cleanup_values`      | enrichment    | `fieldAllowlist`                         |
//! | `reconcile_dcmi_type` | enrichment    |                                          |
//! | `reconcile_language`  | enrichment    |                                          |
//! | `normalize_date`      | enrichment    |                                          |
//! | `shred`               | enrichment    | `fieldPath`, `delimiter`                 |
//! | `classify_coverage`   | enrichment    |                                          |
//! | `construct_preview`   | enrichment    | `uriTemplate`                            |
//! | `ensure_preflabel`    | enrichment    |                                          |
//! | `geocode`             | enrichment    | `truncateToMatchLevel`                   |
//!
//! Cleanup strips trailing `;`, `,`, `/`, `:` and spaces but never a
//! trailing period, so abbreviations such as "U.S." survive.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde_json::Value;

use crate::date;
use crate::geocode::Geocoder;
use crate::hash;
use crate::model::{
    is_http_uri, Aggregation, CollectionRef, DcmiType, LanguageTerm, MapRecord, MatchLevel, Place, SourceResource,
    TemporalSpan, TEXT_LIST_FIELDS,
};
use crate::pipeline::{
    param_bool, param_list, param_str, Envelope, ParamSchema, ParamType, Params, Step, StepError, StepKind,
    StepRegistry, StepReport,
};
use crate::tree::{MetadataTree, TreePath};
use crate::vocab::{collapse_whitespace, Vocabularies};

/// Registry holding every built-in step, geocoding against `geocoder`.
pub fn builtin_registry(geocoder: Arc<dyn Geocoder>) -> StepRegistry {
    let mut reg = StepRegistry::new();
    let s = |v: &str| Value::String(v.to_owned());
    let steps: Vec<(&str, Arc<dyn Step>, ParamSchema)> = alloc::vec![
        (
            "select_id",
            Arc::new(SelectId),
            ParamSchema::new().optional("idPath", ParamType::String, s("header/identifier"), "tree path of the local identifier"),
        ),
        (
            "map",
            Arc::new(Map),
            ParamSchema::new()
                .required("mappingName", ParamType::String, "oai_dc, qdc or mods_basic")
                .required("provider", ParamType::String, "hub name, filled from the profile")
                .optional("dataProvider", ParamType::String, s(""), "fallback when the record names no data provider")
                .optional("intermediateProvider", ParamType::String, s(""), "filled from the profile"),
        ),
        (
            "cleanup_values",
            Arc::new(Cleanup),
            ParamSchema::new().optional(
                "fieldAllowlist",
                ParamType::StringList,
                Value::Array(default_cleanup_fields().into_iter().map(Value::String).collect()),
                "fields to clean",
            ),
        ),
        ("reconcile_dcmi_type", Arc::new(ReconcileType), ParamSchema::new()),
        ("reconcile_language", Arc::new(ReconcileLanguage), ParamSchema::new()),
        ("normalize_date", Arc::new(NormalizeDate), ParamSchema::new()),
        (
            "shred",
            Arc::new(Shred),
            ParamSchema::new()
                .optional("fieldPath", ParamType::String, s("sourceResource/subject"), "list field to split")
                .optional("delimiter", ParamType::String, s(";"), "separator"),
        ),
        ("classify_coverage", Arc::new(ClassifyCoverage { geocoder: geocoder.clone() }), ParamSchema::new()),
        (
            "construct_preview",
            Arc::new(ConstructPreview),
            ParamSchema::new().required("uriTemplate", ParamType::String, "URI with {localId} and/or {identifier}"),
        ),
        ("ensure_preflabel", Arc::new(EnsurePrefLabel), ParamSchema::new()),
        (
            "geocode",
            Arc::new(Geocode { geocoder }),
            ParamSchema::new().optional(
                "truncateToMatchLevel",
                ParamType::Boolean,
                Value::Bool(true),
                "cut the hierarchy at the level the name matched",
            ),
        ),
    ];
    for (name, step, schema) in steps {
        reg.register(name, step, schema).expect("built-in step names are distinct");
    }
    reg
}

// ---------------------------------------------------------------------------
// select_id

pub struct SelectId;

impl Step for SelectId {
    fn kind(&self) -> StepKind {
        StepKind::IdSelection
    }

    fn describe(&self) -> &str {
        "Set the local identifier from a tree path and mint the record id"
    }

    fn check_params(&self, params: &Params) -> Result<(), String> {
        TreePath::parse(param_str(params, "idPath")).map(|_| ()).map_err(|e| e.to_string())
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let path = TreePath::parse(param_str(params, "idPath")).map_err(|e| StepError::new(e.to_string()))?;
        let raw = env.raw_mut()?;
        let local_id = raw
            .tree
            .first_value(&path)
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| StepError::new(format!("no identifier at {path}")))?
            .to_owned();
        raw.id = hash::mint_record_id(&raw.profile_name, &local_id);
        raw.local_id = local_id;
        Ok(StepReport::default())
    }
}

/// Applies `select_id` to a bare tree, for code that needs a raw record's id
/// outside a pipeline run.
pub fn select_local_id(tree: &MetadataTree, id_path: &str) -> Option<String> {
    let path = TreePath::parse(id_path).ok()?;
    tree.first_value(&path).map(str::trim).filter(|v| !v.is_empty()).map(ToOwned::to_owned)
}

// ---------------------------------------------------------------------------
// map

/// Destination of a mapping rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// A plain-text list in `SourceResource`, by JSON name.
    Text(&'static str),
    Date,
    Language,
    Type,
    Spatial,
    Collection,
    DataProvider,
    IsShownAt,
    Preview,
    RightsUri,
}

impl Target {
    /// The record field path the rule writes.
    pub fn field_path(self) -> String {
        match self {
            Target::Text(f) => format!("sourceResource/{f}"),
            Target::Date => "sourceResource/date".into(),
            Target::Language => "sourceResource/language".into(),
            Target::Type => "sourceResource/type".into(),
            Target::Spatial => "sourceResource/spatial".into(),
            Target::Collection => "sourceResource/collection".into(),
            Target::DataProvider => "aggregation/dataProvider".into(),
            Target::IsShownAt => "aggregation/isShownAt".into(),
            Target::Preview => "aggregation/preview".into(),
            Target::RightsUri => "aggregation/rightsUri".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every value, in document order.
    Multi,
    /// The first value only.
    FirstOnly,
    /// The first value that is an absolute http(s) URI.
    FirstUri,
    /// Per selected element, the texts of its `child` elements joined by `sep`.
    Join { child: &'static str, sep: &'static str },
    /// Per selected MODS `titleInfo`: nonSort, title, then ": " subTitle.
    ModsTitle,
}

#[derive(Clone, Copy, Debug)]
pub struct Rule {
    /// Paths relative to the metadata root, tried in order until one yields.
    pub sources: &'static [&'static str],
    pub target: Target,
    pub mode: Mode,
    /// Value used when no source yields anything.
    pub default: Option<&'static str>,
}

const fn rule(sources: &'static [&'static str], target: Target, mode: Mode) -> Rule {
    Rule { sources, target, mode, default: None }
}

pub struct Mapping {
    pub name: &'static str,
    pub rules: &'static [Rule],
}

use Mode::{FirstOnly, FirstUri, Multi};
use Target::Text;

const OAI_DC: &[Rule] = &[
    rule(&["title"], Text("title"), Multi),
    rule(&["creator"], Text("creator"), Multi),
    rule(&["contributor"], Text("contributor"), Multi),
    rule(&["subject"], Text("subject"), Multi),
    rule(&["description"], Text("description"), Multi),
    rule(&["publisher"], Text("publisher"), Multi),
    rule(&["date"], Target::Date, Multi),
    rule(&["type"], Target::Type, Multi),
    rule(&["format"], Text("format"), Multi),
    rule(&["identifier"], Text("identifier"), Multi),
    rule(&["language"], Target::Language, Multi),
    rule(&["relation"], Text("relation"), Multi),
    rule(&["rights"], Text("rights"), Multi),
    rule(&["coverage"], Text("coverage"), Multi),
    rule(&["identifier"], Target::IsShownAt, FirstUri),
];

const QDC: &[Rule] = &[
    rule(&["title"], Text("title"), Multi),
    rule(&["alternative"], Text("title"), Multi),
    rule(&["creator"], Text("creator"), Multi),
    rule(&["contributor"], Text("contributor"), Multi),
    rule(&["subject"], Text("subject"), Multi),
    rule(&["description"], Text("description"), Multi),
    rule(&["abstract"], Text("description"), Multi),
    rule(&["publisher"], Text("publisher"), Multi),
    rule(&["date"], Target::Date, Multi),
    rule(&["created"], Target::Date, Multi),
    rule(&["issued"], Target::Date, Multi),
    rule(&["temporal"], Target::Date, Multi),
    rule(&["type"], Target::Type, Multi),
    rule(&["format"], Text("format"), Multi),
    rule(&["medium"], Text("format"), Multi),
    rule(&["extent"], Text("extent"), Multi),
    rule(&["identifier"], Text("identifier"), Multi),
    rule(&["language"], Target::Language, Multi),
    rule(&["relation"], Text("relation"), Multi),
    rule(&["isPartOf"], Target::Collection, Multi),
    rule(&["rights"], Text("rights"), Multi),
    rule(&["accessRights"], Text("rights"), Multi),
    rule(&["license"], Target::RightsUri, FirstUri),
    rule(&["spatial"], Target::Spatial, Multi),
    rule(&["coverage"], Text("coverage"), Multi),
    rule(&["identifier"], Target::IsShownAt, FirstUri),
];

const MODS_BASIC: &[Rule] = &[
    rule(&["titleInfo"], Text("title"), Mode::ModsTitle),
    rule(&["name"], Text("creator"), Mode::Join { child: "namePart", sep: ", " }),
    rule(&["subject/topic"], Text("subject"), Multi),
    rule(&["subject/geographic"], Target::Spatial, Multi),
    rule(&["subject/temporal"], Target::Date, Multi),
    rule(&["genre"], Text("hasType"), Multi),
    rule(&["abstract"], Text("description"), Multi),
    rule(&["note"], Text("description"), Multi),
    rule(&["originInfo/publisher"], Text("publisher"), Multi),
    rule(&["originInfo/dateCreated"], Target::Date, Multi),
    rule(&["originInfo/dateIssued"], Target::Date, Multi),
    rule(&["typeOfResource"], Target::Type, Multi),
    rule(&["physicalDescription/form"], Text("format"), Multi),
    rule(&["physicalDescription/extent"], Text("extent"), Multi),
    rule(&["identifier"], Text("identifier"), Multi),
    rule(&["language/languageTerm"], Target::Language, Multi),
    rule(&["relatedItem[@type=series]/titleInfo/title"], Text("relation"), Multi),
    rule(&["relatedItem[@type=host]/titleInfo/title"], Target::Collection, Multi),
    rule(&["accessCondition"], Text("rights"), Multi),
    rule(&["recordInfo/recordContentSource"], Target::DataProvider, FirstOnly),
    rule(&["location/url[@usage=primary display]", "location/url[@access=object in context]"], Target::IsShownAt, FirstUri),
    rule(&["location/url[@access=preview]"], Target::Preview, FirstUri),
];

pub const MAPPINGS: &[Mapping] = &[
    Mapping { name: "oai_dc", rules: OAI_DC },
    Mapping { name: "qdc", rules: QDC },
    Mapping { name: "mods_basic", rules: MODS_BASIC },
];

pub fn mapping(name: &str) -> Option<&'static Mapping> {
    MAPPINGS.iter().find(|m| m.name == name)
}

/// The element mapping rules address: the first element child of an OAI
/// `metadata` wrapper when there is one, else the tree itself.
pub fn metadata_root(tree: &MetadataTree) -> &MetadataTree {
    tree.children
        .iter()
        .find(|c| c.local_name() == "metadata")
        .and_then(|m| m.children.first())
        .unwrap_or(tree)
}

fn texts(root: &MetadataTree, rule: &Rule) -> Vec<String> {
    for source in rule.sources {
        let path = TreePath::parse(source).expect("mapping source paths are valid");
        let values: Vec<String> = match rule.mode {
            Multi => root.values(&path).into_iter().map(ToOwned::to_owned).collect(),
            FirstOnly => root.first_value(&path).into_iter().map(ToOwned::to_owned).collect(),
            FirstUri => root.values(&path).into_iter().map(str::trim).find(|v| is_http_uri(v)).map(ToOwned::to_owned).into_iter().collect(),
            Mode::Join { child, sep } => root
                .select(&path)
                .into_iter()
                .map(|node| {
                    node.children
                        .iter()
                        .filter(|c| c.local_name() == child)
                        .filter_map(|c| c.text.as_deref())
                        .collect::<Vec<_>>()
                        .join(sep)
                })
                .filter(|v| !v.is_empty())
                .collect(),
            Mode::ModsTitle => root.select(&path).into_iter().filter_map(mods_title).collect(),
        };
        if !values.is_empty() {
            return values;
        }
    }
    rule.default.map(|d| alloc::vec![d.to_owned()]).unwrap_or_default()
}

fn mods_title(title_info: &MetadataTree) -> Option<String> {
    let part = |name: &str| {
        title_info
            .children
            .iter()
            .find(|c| c.local_name() == name)
            .and_then(|c| c.text.as_deref())
            .map(str::trim)
            .filter(|t| !t.is_empty())
    };
    let title = part("title")?;
    let mut out = String::new();
    if let Some(non_sort) = part("nonSort") {
        out.push_str(non_sort);
        // elided articles ("L'") attach directly
        if !non_sort.ends_with(['\'', '\u{2019}', '-']) {
            out.push(' ');
        }
    }
    out.push_str(title);
    if let Some(sub) = part("subTitle") {
        out.push_str(": ");
        out.push_str(sub);
    }
    Some(out)
}

pub struct Map;

impl Step for Map {
    fn kind(&self) -> StepKind {
        StepKind::Mapping
    }

    fn describe(&self) -> &str {
        "Crosswalk the harvested tree to a record"
    }

    fn check_params(&self, params: &Params) -> Result<(), String> {
        let name = param_str(params, "mappingName");
        mapping(name).map(|_| ()).ok_or_else(|| format!("unknown mapping {name:?}"))
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let name = param_str(params, "mappingName");
        let m = mapping(name).ok_or_else(|| StepError::new(format!("unknown mapping {name:?}")))?;
        let raw = env.raw_mut()?;
        if raw.local_id.is_empty() {
            return Err(StepError::new("localId is not set"));
        }
        let root = metadata_root(&raw.tree);
        let mut sr = SourceResource::default();
        let mut agg = Aggregation {
            provider: param_str(params, "provider").to_owned(),
            intermediate_provider: Some(param_str(params, "intermediateProvider").to_owned()).filter(|s| !s.is_empty()),
            original_record: format!("staging:fetch/{}", raw.local_id),
            ..Aggregation::default()
        };
        for r in m.rules {
            let values = texts(root, r);
            if values.is_empty() {
                continue;
            }
            match r.target {
                Target::Text(field) => {
                    if let Some(list) = sr.text_list_mut(field) {
                        list.edit(|mut v| {
                            v.extend(values);
                            v
                        });
                    }
                }
                Target::Date => sr.date.extend(values.into_iter().map(TemporalSpan::unparsed)),
                Target::Language => {
                    sr.language.extend(values.into_iter().map(|label| LanguageTerm { code: String::new(), label }))
                }
                Target::Type => sr.dcmi_type.extend(values.into_iter().map(DcmiType)),
                Target::Spatial => sr.spatial.extend(values.into_iter().map(Place::named)),
                Target::Collection => {
                    sr.collection.extend(values.into_iter().map(|title| CollectionRef { id: String::new(), title }))
                }
                Target::DataProvider => set_once(&mut agg.data_provider, values),
                Target::IsShownAt => set_once(&mut agg.is_shown_at, values),
                Target::Preview => set_once(&mut agg.preview, values),
                Target::RightsUri => {
                    if agg.rights_uri.is_none() {
                        agg.rights_uri = values.into_iter().next();
                    }
                }
            }
        }
        if agg.data_provider.is_empty() {
            agg.data_provider = param_str(params, "dataProvider").to_owned();
        }
        if sr.title.is_empty() && sr.identifier.is_empty() {
            return Err(StepError::new("record has neither a title nor an identifier"));
        }
        let record = MapRecord {
            id: raw.id.clone(),
            local_id: raw.local_id.clone(),
            profile_name: raw.profile_name.clone(),
            source_resource: sr,
            aggregation: agg,
            provenance: Vec::new(),
            ingestion_sequence: 0,
        };
        env.content = crate::pipeline::Content::Mapped(record);
        Ok(StepReport::default())
    }
}

fn set_once(slot: &mut String, values: Vec<String>) {
    if slot.is_empty() {
        if let Some(v) = values.into_iter().next() {
            *slot = v;
        }
    }
}

// ---------------------------------------------------------------------------
// cleanup_values

const STRIP: [char; 5] = [';', ',', '/', ':', ' '];

/// Trim, collapse internal whitespace, strip trailing `; , / :`.
pub fn clean_value(v: &str) -> String {
    let collapsed = collapse_whitespace(v);
    collapsed.trim_end_matches(STRIP).trim().to_owned()
}

fn default_cleanup_fields() -> Vec<String> {
    let mut fields: Vec<String> = TEXT_LIST_FIELDS.iter().map(|f| format!("sourceResource/{f}")).collect();
    fields.push("sourceResource/type".into());
    fields.extend(["aggregation/dataProvider", "aggregation/provider", "aggregation/intermediateProvider"].map(String::from));
    fields
}

fn list_field(path: &str) -> Option<&str> {
    let f = path.strip_prefix("sourceResource/")?;
    (TEXT_LIST_FIELDS.contains(&f) || f == "type").then_some(f)
}

fn dedup(values: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    values.into_iter().filter(|v| seen.insert(v.clone())).collect()
}

pub struct Cleanup;

impl Step for Cleanup {
    fn describe(&self) -> &str {
        "Trim and collapse whitespace, strip trailing ; , / : (never a period), drop empties and exact duplicates"
    }

    fn check_params(&self, params: &Params) -> Result<(), String> {
        for f in param_list(params, "fieldAllowlist") {
            let ok = list_field(f).is_some()
                || matches!(f, "aggregation/dataProvider" | "aggregation/provider" | "aggregation/intermediateProvider");
            if !ok {
                return Err(format!("{f} is not a cleanable text field"));
            }
        }
        Ok(())
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let r = env.record_mut()?;
        for f in param_list(params, "fieldAllowlist") {
            match f {
                "aggregation/dataProvider" => r.aggregation.data_provider = clean_value(&r.aggregation.data_provider),
                "aggregation/provider" => r.aggregation.provider = clean_value(&r.aggregation.provider),
                "aggregation/intermediateProvider" => {
                    r.aggregation.intermediate_provider =
                        r.aggregation.intermediate_provider.as_deref().map(clean_value).filter(|v| !v.is_empty());
                }
                _ => {
                    let field = list_field(f).ok_or_else(|| StepError::new(format!("{f} is not a text field")))?;
                    if let Some(list) = r.source_resource.text_list_mut(field) {
                        list.edit(|v| dedup(v.iter().map(|s| clean_value(s)).filter(|s| !s.is_empty()).collect()));
                    }
                }
            }
        }
        Ok(StepReport::default())
    }
}

// ---------------------------------------------------------------------------
// reconcile_dcmi_type

pub struct ReconcileType;

impl Step for ReconcileType {
    fn describe(&self) -> &str {
        "Match type values to the DCMI Type Vocabulary; move non-matches to hasType"
    }

    fn apply(&self, env: &mut Envelope, _: &Params) -> Result<StepReport, StepError> {
        let vocab = Vocabularies::bundled();
        let sr = &mut env.record_mut()?.source_resource;
        let mut kept = Vec::new();
        let mut moved = 0u32;
        for t in core::mem::take(&mut sr.dcmi_type) {
            match vocab.match_dcmi_type(&t.0) {
                Some(term) => kept.push(term.to_owned()),
                None => {
                    moved += 1;
                    if !sr.has_type.contains(&t.0) {
                        sr.has_type.push(t.0);
                    }
                }
            }
        }
        sr.dcmi_type = dedup(kept).into_iter().map(DcmiType).collect();
        Ok(if moved > 0 { StepReport::note(format!("{moved} type value(s) moved to hasType")) } else { StepReport::default() })
    }
}

// ---------------------------------------------------------------------------
// reconcile_language

pub struct ReconcileLanguage;

impl Step for ReconcileLanguage {
    fn describe(&self) -> &str {
        "Match language values to ISO 639-3 by 639-3 code, 639-1 code or English name"
    }

    fn apply(&self, env: &mut Envelope, _: &Params) -> Result<StepReport, StepError> {
        let vocab = Vocabularies::bundled();
        let sr = &mut env.record_mut()?.source_resource;
        let mut unmatched = 0u32;
        let mut out: Vec<LanguageTerm> = Vec::new();
        for term in core::mem::take(&mut sr.language) {
            let resolved = if vocab.language_name(&term.code) == Some(term.label.as_str()) {
                Some(term.clone())
            } else {
                let probe = if term.code.is_empty() { &term.label } else { &term.code };
                vocab.match_language(probe).map(|(code, name)| LanguageTerm { code: code.into(), label: name.into() })
            };
            match resolved {
                Some(t) if out.iter().any(|o| o.code == t.code) => {}
                Some(t) => out.push(t),
                None => {
                    unmatched += 1;
                    out.push(term);
                }
            }
        }
        sr.language = out;
        Ok(StepReport::unresolved(unmatched, format!("{unmatched} unmatched language value(s)")))
    }
}

// ---------------------------------------------------------------------------
// normalize_date

pub struct NormalizeDate;

impl Step for NormalizeDate {
    fn describe(&self) -> &str {
        "Parse display dates into begin/end (rules D1-D7); unparseable values keep displayDate only"
    }

    fn apply(&self, env: &mut Envelope, _: &Params) -> Result<StepReport, StepError> {
        let sr = &mut env.record_mut()?.source_resource;
        let mut unparsed = 0u32;
        for span in &mut sr.date {
            if span.begin.is_some() || span.end.is_some() {
                continue;
            }
            match date::parse(&span.display_date) {
                Some(p) => {
                    span.begin = Some(p.begin);
                    span.end = Some(p.end);
                }
                None => unparsed += 1,
            }
        }
        Ok(StepReport::unresolved(unparsed, format!("{unparsed} unparseable date(s)")))
    }
}

// ---------------------------------------------------------------------------
// shred

pub struct Shred;

impl Step for Shred {
    fn describe(&self) -> &str {
        "Split values of a list field on a delimiter"
    }

    fn check_params(&self, params: &Params) -> Result<(), String> {
        if param_str(params, "delimiter").is_empty() {
            return Err("delimiter must not be empty".into());
        }
        let f = param_str(params, "fieldPath");
        list_field(f).map(|_| ()).ok_or_else(|| format!("{f} is not a text list field"))
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let delimiter = param_str(params, "delimiter");
        if delimiter.is_empty() {
            return Err(StepError::new("delimiter must not be empty"));
        }
        let f = param_str(params, "fieldPath");
        let field = list_field(f).ok_or_else(|| StepError::new(format!("{f} is not a text list field")))?;
        let r = env.record_mut()?;
        if let Some(list) = r.source_resource.text_list_mut(field) {
            list.edit(|v| {
                dedup(
                    v.iter()
                        .flat_map(|s| s.split(delimiter))
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(ToOwned::to_owned)
                        .collect(),
                )
            });
        }
        Ok(StepReport::default())
    }
}

// ---------------------------------------------------------------------------
// classify_coverage

/// Where a coverage value went.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoverageClass {
    Date(date::ParsedDate),
    Spatial,
    Both { place: String, date_text: String, date: date::ParsedDate },
    Subject,
}

/// Ends in a parenthetical two-letter code, as in "Charlotte (NC)".
fn has_state_code(v: &str) -> bool {
    let Some(inner) = v.trim_end().strip_suffix(')').and_then(|s| s.rsplit_once('(')).map(|(_, i)| i.trim()) else {
        return false;
    };
    inner.len() == 2 && inner.bytes().all(|b| b.is_ascii_uppercase())
}

pub fn classify(value: &str, geocoder: &dyn Geocoder) -> CoverageClass {
    let v = value.trim();
    if let Some(d) = date::parse(v) {
        return CoverageClass::Date(d);
    }
    let region_tail = v.rsplit_once(',').is_some_and(|(head, tail)| !head.trim().is_empty() && geocoder.is_region_name(tail));
    if has_state_code(v) || region_tail || geocoder.geocode_name(v).is_some() {
        return CoverageClass::Spatial;
    }
    if let Some((head, tail)) = v.rsplit_once(',') {
        let (head, tail) = (head.trim(), tail.trim());
        if !head.is_empty() {
            if let Some(d) = date::parse(tail) {
                return CoverageClass::Both { place: head.to_owned(), date_text: tail.to_owned(), date: d };
            }
        }
    }
    CoverageClass::Subject
}

pub struct ClassifyCoverage {
    pub geocoder: Arc<dyn Geocoder>,
}

fn span(display: &str, d: date::ParsedDate) -> TemporalSpan {
    TemporalSpan { begin: Some(d.begin), end: Some(d.end), display_date: display.to_owned() }
}

impl Step for ClassifyCoverage {
    fn describe(&self) -> &str {
        "Sort dc:coverage values into date, spatial, both, or leave them as subjects"
    }

    fn apply(&self, env: &mut Envelope, _: &Params) -> Result<StepReport, StepError> {
        let sr = &mut env.record_mut()?.source_resource;
        let mut left = 0u32;
        for value in core::mem::take(&mut sr.coverage) {
            match classify(&value, self.geocoder.as_ref()) {
                CoverageClass::Date(d) => sr.date.push(span(&value, d)),
                CoverageClass::Spatial => sr.spatial.push(Place::named(value.trim())),
                CoverageClass::Both { place, date_text, date } => {
                    sr.spatial.push(Place::named(place));
                    sr.date.push(span(&date_text, date));
                }
                CoverageClass::Subject => {
                    left += 1;
                    if !sr.subject.contains(&value) {
                        sr.subject.push(value);
                    }
                }
            }
        }
        Ok(if left > 0 {
            StepReport::note(format!("{left} coverage value(s) left in subject"))
        } else {
            StepReport::default()
        })
    }
}

// ---------------------------------------------------------------------------
// construct_preview

fn template_placeholders(template: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..].find('}').ok_or("unclosed placeholder")?;
        let name = &rest[open + 1..open + close];
        if !matches!(name, "localId" | "identifier") {
            return Err(format!("unknown placeholder {{{name}}}"));
        }
        out.push(name);
        rest = &rest[open + close + 1..];
    }
    Ok(out)
}

/// Percent-encodes everything outside RFC 3986 unreserved characters and `:`.
fn encode_segment(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~:".contains(&b) {
            out.push(char::from(b));
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub struct ConstructPreview;

impl Step for ConstructPreview {
    fn describe(&self) -> &str {
        "Build aggregation/preview from a URI template when the record has none"
    }

    fn check_params(&self, params: &Params) -> Result<(), String> {
        let t = param_str(params, "uriTemplate");
        let names = template_placeholders(t)?;
        if names.is_empty() {
            return Err("template needs {localId} or {identifier}".into());
        }
        Ok(())
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let template = param_str(params, "uriTemplate");
        let r = env.record_mut()?;
        if !r.aggregation.preview.is_empty() {
            return Ok(StepReport::note("preview already present"));
        }
        template_placeholders(template).map_err(StepError::new)?;
        let mut uri = template.to_owned();
        if uri.contains("{localId}") {
            if r.local_id.is_empty() {
                return Err(StepError::new("{localId} is empty"));
            }
            uri = uri.replace("{localId}", &encode_segment(&r.local_id));
        }
        if uri.contains("{identifier}") {
            let id = r
                .source_resource
                .identifier
                .iter()
                .find(|i| !i.is_empty() && !is_http_uri(i))
                .ok_or_else(|| StepError::new("{identifier} has no value to substitute"))?;
            uri = uri.replace("{identifier}", &encode_segment(id));
        }
        r.aggregation.preview = uri;
        Ok(StepReport::default())
    }
}

// ---------------------------------------------------------------------------
// ensure_preflabel

pub struct EnsurePrefLabel;

impl Step for EnsurePrefLabel {
    fn describe(&self) -> &str {
        "Give every place a prefLabel: city, else county, state, country, name"
    }

    fn apply(&self, env: &mut Envelope, _: &Params) -> Result<StepReport, StepError> {
        for place in &mut env.record_mut()?.source_resource.spatial {
            if !place.pref_label.is_empty() {
                continue;
            }
            let label = [&place.city, &place.county, &place.state, &place.country]
                .into_iter()
                .flatten()
                .find(|s| !s.is_empty())
                .cloned()
                .unwrap_or_else(|| place.name.clone());
            place.pref_label = label;
        }
        Ok(StepReport::default())
    }
}

// ---------------------------------------------------------------------------
// geocode

pub struct Geocode {
    pub geocoder: Arc<dyn Geocoder>,
}

impl Step for Geocode {
    fn describe(&self) -> &str {
        "Fill coordinates and the country/state/county/city hierarchy of places without coordinates"
    }

    fn apply(&self, env: &mut Envelope, params: &Params) -> Result<StepReport, StepError> {
        let truncate = param_bool(params, "truncateToMatchLevel");
        let mut misses = 0u32;
        for place in &mut env.record_mut()?.source_resource.spatial {
            if place.coordinates.is_some() {
                continue;
            }
            let name = if place.name.is_empty() { &place.pref_label } else { &place.name };
            let Some(res) = self.geocoder.resolve(name, truncate) else {
                misses += 1;
                continue;
            };
            place.coordinates = Some(res.coordinates);
            for (slot, level) in [
                (&mut place.country, MatchLevel::Country),
                (&mut place.state, MatchLevel::State),
                (&mut place.county, MatchLevel::County),
                (&mut place.city, MatchLevel::City),
            ] {
                if slot.is_none() {
                    *slot = res.at(level).map(ToOwned::to_owned);
                }
            }
            if place.match_level.is_unmatched() {
                place.match_level = res.level;
            }
        }
        Ok(StepReport::unresolved(misses, format!("{misses} place(s) not geocoded")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geocode::Gazetteer;
    use crate::pipeline::{run_pipeline, NoClock, ResolvedStep, Status};

    fn registry() -> StepRegistry {
        builtin_registry(Arc::new(Gazetteer::bundled().clone()))
    }

    fn bind(name: &str, params: serde_json::Value) -> ResolvedStep {
        let p = params.as_object().cloned().unwrap_or_default();
        registry().bind(name, &p).unwrap()
    }

    fn mapped(sr: SourceResource) -> Envelope {
        Envelope::mapped(MapRecord {
            id: "id".into(),
            local_id: "abc".into(),
            profile_name: "demo".into(),
            source_resource: sr,
            ..Default::default()
        })
    }

    fn run(env: Envelope, step: ResolvedStep) -> Envelope {
        run_pipeline(env, &[step], &NoClock)
    }

    fn sr(env: &Envelope) -> &SourceResource {
        &env.record().unwrap().source_resource
    }

    fn oai_record() -> MetadataTree {
        MetadataTree::new("oai:record")
            .with_child(
                MetadataTree::new("oai:header")
                    .with_child(MetadataTree::leaf("oai:identifier", "oai:texashistory.unt.edu:metapth12345")),
            )
            .with_child(
                MetadataTree::new("oai:metadata").with_child(
                    MetadataTree::new("oai_dc:dc")
                        .with_child(MetadataTree::leaf("dc:title", "Main Street"))
                        .with_child(MetadataTree::leaf("dc:subject", "Cattle"))
                        .with_child(MetadataTree::leaf("dc:subject", "Ranching"))
                        .with_child(MetadataTree::leaf("dc:publisher", "UNT Press"))
                        .with_child(MetadataTree::leaf("dc:source", "Box 3"))
                        .with_child(MetadataTree::leaf("dc:identifier", "metapth12345"))
                        .with_child(MetadataTree::leaf("dc:identifier", "https://texashistory.unt.edu/ark:/67531/metapth12345/")),
                ),
            )
    }

    #[test]
    fn select_id_and_map() {
        let id = bind("select_id", serde_json::json!({}));
        let map = bind("map", serde_json::json!({"mappingName": "oai_dc", "provider": "Portal"}));
        let out = run_pipeline(Envelope::raw(oai_record(), "texas"), &[id, map], &NoClock);
        let r = out.record().unwrap();
        assert_eq!(r.local_id, "oai:texashistory.unt.edu:metapth12345");
        assert_eq!(r.id, hash::mint_record_id("texas", "oai:texashistory.unt.edu:metapth12345"));
        assert_eq!(r.source_resource.subject, ["Cattle", "Ranching"]);
        assert_eq!(r.source_resource.publisher, ["UNT Press"]);
        assert_eq!(r.aggregation.is_shown_at, "https://texashistory.unt.edu/ark:/67531/metapth12345/");
        assert_eq!(r.aggregation.provider, "Portal");
        assert!(out.outcomes.iter().all(|o| o.status == Status::Applied));
    }

    #[test]
    fn select_id_missing_path_fails() {
        let id = bind("select_id", serde_json::json!({"idPath": "header/nope"}));
        let env = Envelope::raw(oai_record(), "texas");
        let out = run(env.clone(), id);
        assert_eq!(out.content, env.content);
        assert_eq!(out.outcomes[0].status, Status::Failed);
    }

    #[test]
    fn mods_title_composition() {
        let ti = MetadataTree::new("mods:titleInfo")
            .with_child(MetadataTree::leaf("mods:nonSort", "The"))
            .with_child(MetadataTree::leaf("mods:title", "Woodlands"));
        assert_eq!(mods_title(&ti).as_deref(), Some("The Woodlands"));
        let ti = ti.with_child(MetadataTree::leaf("mods:subTitle", "a history"));
        assert_eq!(mods_title(&ti).as_deref(), Some("The Woodlands: a history"));
    }

    #[test]
    fn mapping_targets_exist_in_schema() {
        for m in MAPPINGS {
            for r in m.rules {
                assert!(crate::model::FIELD_PATHS.contains(&r.target.field_path().as_str()), "{}", m.name);
                for s in r.sources {
                    TreePath::parse(s).unwrap();
                }
            }
        }
    }

    #[test]
    fn cleanup_examples() {
        assert_eq!(clean_value("Portraits;  "), "Portraits");
        assert_eq!(clean_value("U.S."), "U.S.");
        assert_eq!(clean_value("  Smith,   John / "), "Smith, John");
        let env = mapped(SourceResource { subject: alloc::vec!["Maps".into(), "Maps".into(), " ; ".into()], ..Default::default() });
        let out = run(env, bind("cleanup_values", serde_json::json!({})));
        assert_eq!(sr(&out).subject, ["Maps"]);
    }

    #[test]
    fn type_reconciliation() {
        let env = mapped(SourceResource {
            dcmi_type: ["images", "Moving Image", "postcard"].map(|s| DcmiType(s.into())).to_vec(),
            ..Default::default()
        });
        let out = run(env, bind("reconcile_dcmi_type", serde_json::json!({})));
        assert_eq!(sr(&out).dcmi_type, [DcmiType("Image".into()), DcmiType("MovingImage".into())]);
        assert_eq!(sr(&out).has_type, ["postcard"]);
    }

    #[test]
    fn language_reconciliation() {
        let lang = |l: &str| LanguageTerm { code: String::new(), label: l.into() };
        let env = mapped(SourceResource { language: alloc::vec![lang("en"), lang("Esperanto-ish")], ..Default::default() });
        let out = run(env, bind("reconcile_language", serde_json::json!({})));
        assert_eq!(sr(&out).language[0], LanguageTerm { code: "eng".into(), label: "English".into() });
        assert_eq!(sr(&out).language[1], lang("Esperanto-ish"));
        assert_eq!(out.outcomes[0].unresolved, 1);
    }

    #[test]
    fn date_normalization() {
        let env = mapped(SourceResource {
            date: alloc::vec![TemporalSpan::unparsed("ca. 1866"), TemporalSpan::unparsed("sometime")],
            ..Default::default()
        });
        let out = run(env, bind("normalize_date", serde_json::json!({})));
        let d = &sr(&out).date;
        assert_eq!((d[0].begin.as_deref(), d[0].end.as_deref(), d[0].display_date.as_str()), (Some("1866"), Some("1866"), "ca. 1866"));
        assert_eq!(d[1], TemporalSpan::unparsed("sometime"));
        assert_eq!(out.outcomes[0].unresolved, 1);
    }

    #[test]
    fn shredding() {
        let env = mapped(SourceResource { subject: alloc::vec!["Cattle; Ranching; Texas".into(), "Texas".into()], ..Default::default() });
        let out = run(env, bind("shred", serde_json::json!({})));
        assert_eq!(sr(&out).subject, ["Cattle", "Ranching", "Texas"]);
        assert!(registry().bind("shred", serde_json::json!({"delimiter": ""}).as_object().unwrap()).is_err());
    }

    #[test]
    fn coverage_classes() {
        let g = Gazetteer::bundled();
        assert!(matches!(classify("1863", g), CoverageClass::Date(_)));
        assert_eq!(classify("Charlotte (NC)", g), CoverageClass::Spatial);
        assert_eq!(classify("Denton County, Texas", g), CoverageClass::Spatial);
        assert!(matches!(classify("Boston, 1850", g), CoverageClass::Both { ref place, .. } if place == "Boston"));
        assert_eq!(classify("Reconstruction era", g), CoverageClass::Subject);
        let env = mapped(SourceResource { coverage: alloc::vec!["Boston, 1850".into(), "1863".into()], ..Default::default() });
        let out = run(env, bind("classify_coverage", serde_json::json!({})));
        assert_eq!(sr(&out).spatial, [Place::named("Boston")]);
        assert_eq!(sr(&out).date.len(), 2);
        assert!(sr(&out).coverage.is_empty());
    }

    #[test]
    fn preview_template() {
        let step = bind("construct_preview", serde_json::json!({"uriTemplate": "https://hub.example/thumbs/{localId}.jpg"}));
        let out = run(mapped(SourceResource::default()), step.clone());
        assert_eq!(out.record().unwrap().aggregation.preview, "https://hub.example/thumbs/abc.jpg");
        let again = run(out, step);
        assert_eq!(again.outcomes[1].status, Status::Skipped);
        let by_id = bind("construct_preview", serde_json::json!({"uriTemplate": "https://hub.example/{identifier}"}));
        assert_eq!(run(mapped(SourceResource::default()), by_id).outcomes[0].status, Status::Failed);
        assert!(registry().bind("construct_preview", serde_json::json!({"uriTemplate": "x/{foo}"}).as_object().unwrap()).is_err());
    }

    #[test]
    fn preflabel_fallback() {
        let places = alloc::vec![
            Place { state: Some("North Carolina".into()), ..Default::default() },
            Place { city: Some("Durham".into()), state: Some("NC".into()), ..Default::default() },
            Place::named("Kept"),
        ];
        let out = run(mapped(SourceResource { spatial: places, ..Default::default() }), bind("ensure_preflabel", serde_json::json!({})));
        let labels: Vec<_> = sr(&out).spatial.iter().map(|p| p.pref_label.as_str()).collect();
        assert_eq!(labels, ["North Carolina", "Durham", "Kept"]);
    }

    #[test]
    fn geocoding_fills_and_truncates() {
        let env = mapped(SourceResource { spatial: alloc::vec![Place::named("Charlotte (NC)"), Place::named("Wisconsin")], ..Default::default() });
        let out = run(env, bind("geocode", serde_json::json!({})));
        let p = &sr(&out).spatial;
        assert_eq!(p[0].coordinates.unwrap().to_string(), "35.226944, -80.843333");
        assert_eq!(p[0].county.as_deref(), Some("Mecklenberg County"));
        assert_eq!(p[0].match_level, MatchLevel::City);
        assert_eq!(p[1].state.as_deref(), Some("Wisconsin"));
        assert_eq!(p[1].county, None);
        let full = run(
            mapped(SourceResource { spatial: alloc::vec![Place::named("Wisconsin")], ..Default::default() }),
            bind("geocode", serde_json::json!({"truncateToMatchLevel": false})),
        );
        assert_eq!(sr(&full).spatial[0].county.as_deref(), Some("Portage County"));
    }
}
