//! Field-level QA reports over a run's staging data.
//!
//! Raw-stage field paths address the harvested tree from the OAI `record`
//! element (or the file record element) down, e.g. `metadata/dc/subject`.
//! Enriched-stage paths address the record, e.g. `sourceResource/subject`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use confluence_core::hash::mint_record_id;
use confluence_core::ingestion::{IngestionDocument, Task, TaskStatus};
use confluence_core::model::{is_known_field_path, leaf_strings, strip_indices};
use confluence_core::pipeline::StepKind;
use confluence_core::tree::TreePath;
use serde::Serialize;

use crate::engine::{Engine, EngineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Values,
    Counts,
    StageDiff,
    Validation,
}

impl ReportKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "values" => Some(Self::Values),
            "counts" => Some(Self::Counts),
            "stage-diff" => Some(Self::StageDiff),
            "validation" => Some(Self::Validation),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Values => "values",
            Self::Counts => "counts",
            Self::StageDiff => "stage-diff",
            Self::Validation => "validation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportStage {
    Raw,
    Enriched,
}

impl ReportStage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Self::Raw),
            "enriched" => Some(Self::Enriched),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Enriched => "enriched",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueRow {
    pub value: String,
    pub record_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CountRow {
    pub value: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DiffRow {
    pub record_id: String,
    pub field_path: String,
    pub raw_value: String,
    pub enriched_value: String,
    pub step_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationRow {
    pub rule: String,
    pub field_path: String,
    pub count: u64,
    pub sample_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Report {
    Values(Vec<ValueRow>),
    Counts(Vec<CountRow>),
    StageDiff(Vec<DiffRow>),
    Validation(Vec<ValidationRow>),
}

pub const SAMPLE_LIMIT: usize = 5;

fn staged_run(engine: &Engine, run_id: &str, task: Task) -> Result<IngestionDocument> {
    let doc = engine.run(run_id)?;
    if doc.status(task) != TaskStatus::Complete {
        return Err(EngineError::Conflict(format!("run {run_id} has not completed {task}")));
    }
    let batches = if task == Task::Fetch { &doc.staging.fetch_batches } else { &doc.staging.enrich_batches };
    let counted = if task == Task::Fetch { doc.counts.fetched } else { doc.counts.enriched };
    if batches.is_empty() && counted > 0 {
        return Err(EngineError::NotFound(format!("{task} staging for run {run_id} (removed by cleanup)")));
    }
    Ok(doc)
}

fn check_enriched_path(field: &str) -> Result<()> {
    if is_known_field_path(&strip_indices(field)) {
        Ok(())
    } else {
        Err(EngineError::BadRequest(format!("unknown field path {field:?}")))
    }
}

/// One row per (value, record) occurrence, sorted by value then record id.
pub fn field_values(engine: &Engine, run_id: &str, field: &str, stage: ReportStage) -> Result<Vec<ValueRow>> {
    let mut rows = Vec::new();
    match stage {
        ReportStage::Raw => {
            let path = TreePath::parse(field).map_err(|e| EngineError::BadRequest(e.to_string()))?;
            let doc = staged_run(engine, run_id, Task::Fetch)?;
            for raw in engine.fetched_records(&doc)? {
                let id = mint_record_id(&doc.profile_name, &raw.local_id);
                rows.extend(raw.tree.values(&path).into_iter().map(|v| ValueRow { value: v.to_owned(), record_id: id.clone() }));
            }
        }
        ReportStage::Enriched => {
            check_enriched_path(field)?;
            let doc = staged_run(engine, run_id, Task::Enrich)?;
            for record in engine.enriched_records(&doc)? {
                let view = record.content_view();
                rows.extend(leaf_strings(&view, field).into_iter().map(|value| ValueRow { value, record_id: record.id.clone() }));
            }
        }
    }
    rows.sort();
    Ok(rows)
}

/// Occurrences per distinct value, most frequent first, ties by value.
pub fn field_counts(engine: &Engine, run_id: &str, field: &str, stage: ReportStage) -> Result<Vec<CountRow>> {
    Ok(count_values(field_values(engine, run_id, field, stage)?.into_iter().map(|r| r.value)))
}

pub fn count_values(values: impl IntoIterator<Item = String>) -> Vec<CountRow> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut rows: Vec<CountRow> = counts.into_iter().map(|(value, count)| CountRow { value, count }).collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
    rows
}

/// One row per enrichment provenance entry at or below `field`, in record
/// then provenance order.
pub fn stage_diff(engine: &Engine, run_id: &str, field: &str) -> Result<Vec<DiffRow>> {
    check_enriched_path(field)?;
    let doc = staged_run(engine, run_id, Task::Enrich)?;
    let prefix = strip_indices(field);
    let mut rows = Vec::new();
    for record in engine.enriched_records(&doc)? {
        for p in &record.provenance {
            if engine.registry().kind_of(&p.step_name).is_some_and(|k| k != StepKind::Enrichment) {
                continue;
            }
            let path = strip_indices(&p.field_path);
            let under = path == prefix || path.strip_prefix(prefix.as_str()).is_some_and(|rest| rest.starts_with('/'));
            if under {
                rows.push(DiffRow {
                    record_id: record.id.clone(),
                    field_path: p.field_path.clone(),
                    raw_value: p.prior_value.clone().unwrap_or_default(),
                    enriched_value: p.new_value.clone().unwrap_or_default(),
                    step_name: p.step_name.clone(),
                });
            }
        }
    }
    Ok(rows)
}

/// Violations across the run's enriched records, grouped by rule and field.
pub fn validation_summary(engine: &Engine, run_id: &str) -> Result<Vec<ValidationRow>> {
    let doc = staged_run(engine, run_id, Task::Enrich)?;
    let validator = engine.run_profile(&doc)?.validator();
    let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for record in engine.enriched_records(&doc)? {
        for v in validator.validate(&record).violations {
            groups.entry((v.rule.as_str().to_owned(), v.field_path)).or_default().push(record.id.clone());
        }
    }
    Ok(groups
        .into_iter()
        .map(|((rule, field_path), mut ids)| {
            ids.sort();
            let count = ids.len() as u64;
            ids.dedup();
            ids.truncate(SAMPLE_LIMIT);
            ValidationRow { rule, field_path, count, sample_ids: ids }
        })
        .collect())
}

/// Builds the report `kind`. `field` is required except for validation.
pub fn generate(engine: &Engine, run_id: &str, kind: ReportKind, field: Option<&str>, stage: ReportStage) -> Result<Report> {
    let need_field = || field.ok_or_else(|| EngineError::BadRequest(format!("the {} report needs a field", kind.as_str())));
    Ok(match kind {
        ReportKind::Values => Report::Values(field_values(engine, run_id, need_field()?, stage)?),
        ReportKind::Counts => Report::Counts(field_counts(engine, run_id, need_field()?, stage)?),
        ReportKind::StageDiff => Report::StageDiff(stage_diff(engine, run_id, need_field()?)?),
        ReportKind::Validation => Report::Validation(validation_summary(engine, run_id)?),
    })
}

impl Report {
    pub fn len(&self) -> usize {
        match self {
            Report::Values(r) => r.len(),
            Report::Counts(r) => r.len(),
            Report::StageDiff(r) => r.len(),
            Report::Validation(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// RFC 4180 CSV with a header row.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let result: csv::Result<()> = (|| {
            match self {
                Report::Values(rows) => {
                    w.write_record(["value", "recordId"])?;
                    for r in rows {
                        w.write_record([&r.value, &r.record_id])?;
                    }
                }
                Report::Counts(rows) => {
                    w.write_record(["value", "count"])?;
                    for r in rows {
                        w.write_record([r.value.as_str(), &r.count.to_string()])?;
                    }
                }
                Report::StageDiff(rows) => {
                    w.write_record(["recordId", "fieldPath", "rawValue", "enrichedValue", "stepName"])?;
                    for r in rows {
                        w.write_record([&r.record_id, &r.field_path, &r.raw_value, &r.enriched_value, &r.step_name])?;
                    }
                }
                Report::Validation(rows) => {
                    w.write_record(["rule", "fieldPath", "count", "sampleIds"])?;
                    for r in rows {
                        w.write_record([r.rule.as_str(), &r.field_path, &r.count.to_string(), &r.sample_ids.join(" ")])?;
                    }
                }
            }
            Ok(())
        })();
        result.expect("writing CSV to memory cannot fail");
        w.into_inner().expect("in-memory CSV writer")
    }
}

/// Writes `report` as CSV and JSON under the run's reports directory and
/// returns the CSV path.
pub fn write_report(
    engine: &Engine,
    run_id: &str,
    kind: ReportKind,
    field: Option<&str>,
    stage: ReportStage,
    report: &Report,
) -> Result<PathBuf> {
    let doc = engine.run(run_id)?;
    let dir = engine.reports_dir(&doc);
    std::fs::create_dir_all(&dir)?;
    let mut stem = kind.as_str().to_owned();
    if matches!(kind, ReportKind::Values | ReportKind::Counts) {
        stem.push('-');
        stem.push_str(stage.as_str());
    }
    if let Some(f) = field.filter(|_| kind != ReportKind::Validation) {
        stem.push('-');
        stem.push_str(&f.replace('/', "."));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, report.to_csv())?;
    let json = serde_json::to_vec_pretty(report).map_err(|e| EngineError::Io(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_sort_by_count_then_value() {
        let rows = count_values(["Maps", "Cattle", "Maps", "Bees", "Maps"].map(String::from));
        let got: Vec<_> = rows.iter().map(|r| (r.value.as_str(), r.count)).collect();
        assert_eq!(got, [("Maps", 3), ("Bees", 1), ("Cattle", 1)]);
    }

    #[test]
    fn csv_quotes_per_rfc4180() {
        let r = Report::Values(vec![ValueRow { value: "a, \"b\"".into(), record_id: "x".into() }]);
        assert_eq!(String::from_utf8(r.to_csv()).unwrap(), "value,recordId\r\n\"a, \"\"b\"\"\",x\r\n");
    }
}
