//! The ingestion document: state of one ingestion run across its six tasks,
//! plus the count-threshold rule that raises alerts.
//!
//! Tasks run in a fixed order. A task may start only when its predecessor is
//! complete, and only from `pending` or `failed` (a failed task can be
//! retried). Timestamps are supplied by the caller as RFC 3339 strings.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::profile::Thresholds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fetch,
    Enrich,
    Save,
    CheckCounts,
    RemoveDeleted,
    Cleanup,
}

pub const TASKS: [Task; 6] = [Task::Fetch, Task::Enrich, Task::Save, Task::CheckCounts, Task::RemoveDeleted, Task::Cleanup];

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Fetch => "fetch",
            Task::Enrich => "enrich",
            Task::Save => "save",
            Task::CheckCounts => "check_counts",
            Task::RemoveDeleted => "remove_deleted",
            Task::Cleanup => "cleanup",
        }
    }

    /// Accepts the canonical names and the CLI short forms `check`/`delete`.
    pub fn parse(s: &str) -> Option<Task> {
        Some(match s {
            "fetch" => Task::Fetch,
            "enrich" => Task::Enrich,
            "save" => Task::Save,
            "check_counts" | "check" => Task::CheckCounts,
            "remove_deleted" | "delete" => Task::RemoveDeleted,
            "cleanup" => Task::Cleanup,
            _ => return None,
        })
    }

    pub fn predecessor(self) -> Option<Task> {
        let i = TASKS.iter().position(|t| *t == self)?;
        i.checked_sub(1).map(|p| TASKS[p])
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    #[default]
    Pending,
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskState {
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counts {
    pub fetched: u64,
    /// Deleted-flagged records seen during fetch.
    pub harvested_deletions: u64,
    pub enriched: u64,
    pub added: u64,
    pub changed: u64,
    pub unchanged: u64,
    /// Records that failed validation and were not saved.
    pub excluded: u64,
    /// Records gone from the source this run (absent or deleted-flagged).
    pub deleted: u64,
    /// Records actually tombstoned by the remove-deleted task.
    pub tombstoned: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Staging {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default)]
    pub fetch_batches: Vec<String>,
    #[serde(default)]
    pub enrich_batches: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tombstones: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Metric {
    AddedFrac,
    ChangedFrac,
    DeletedFrac,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::AddedFrac => "addedFrac",
            Metric::ChangedFrac => "changedFrac",
            Metric::DeletedFrac => "deletedFrac",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Alert {
    pub timestamp: String,
    pub profile: String,
    pub run_id: String,
    pub metric: Metric,
    pub value: f64,
    pub threshold: f64,
    pub contact: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestionDocument {
    pub run_id: String,
    pub profile_name: String,
    pub sequence: u64,
    pub created_at: String,
    /// Enabled pipeline steps, frozen when the run was created.
    pub pipeline: Vec<String>,
    pub tasks: BTreeMap<Task, TaskState>,
    pub staging: Staging,
    pub counts: Counts,
    /// Per enrichment step, the number of records it failed on or left
    /// values unresolved in.
    #[serde(default)]
    pub failures: BTreeMap<String, u64>,
    /// Record count the thresholds were measured against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<u64>,
    #[serde(default)]
    pub alerts: Vec<Alert>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub promoted_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransitionError {
    #[error("task {task} cannot start before {requires} is complete")]
    OutOfOrder { task: Task, requires: Task },
    #[error("task {0} is already running")]
    Running(Task),
    #[error("task {0} is already complete")]
    Complete(Task),
    #[error("task {0} is not running")]
    NotRunning(Task),
}

impl IngestionDocument {
    pub fn new(profile_name: &str, sequence: u64, pipeline: Vec<String>, created_at: &str) -> Self {
        Self {
            run_id: format!("{profile_name}-{sequence}"),
            profile_name: profile_name.to_owned(),
            sequence,
            created_at: created_at.to_owned(),
            pipeline,
            tasks: TASKS.iter().map(|t| (*t, TaskState::default())).collect(),
            staging: Staging::default(),
            counts: Counts::default(),
            failures: BTreeMap::new(),
            baseline: None,
            alerts: Vec::new(),
            promoted_at: None,
        }
    }

    pub fn status(&self, task: Task) -> TaskStatus {
        self.tasks.get(&task).map(|s| s.status).unwrap_or_default()
    }

    /// Whether `task` may start now.
    pub fn can_begin(&self, task: Task) -> Result<(), TransitionError> {
        match self.status(task) {
            TaskStatus::Running => return Err(TransitionError::Running(task)),
            TaskStatus::Complete => return Err(TransitionError::Complete(task)),
            TaskStatus::Pending | TaskStatus::Failed => {}
        }
        if let Some(prev) = task.predecessor() {
            if self.status(prev) != TaskStatus::Complete {
                return Err(TransitionError::OutOfOrder { task, requires: prev });
            }
        }
        Ok(())
    }

    pub fn begin(&mut self, task: Task, at: &str) -> Result<(), TransitionError> {
        self.can_begin(task)?;
        self.tasks.insert(task, TaskState { status: TaskStatus::Running, started_at: Some(at.to_owned()), ..Default::default() });
        Ok(())
    }

    pub fn complete(&mut self, task: Task, at: &str) -> Result<(), TransitionError> {
        self.finish(task, TaskStatus::Complete, None, at)
    }

    pub fn fail(&mut self, task: Task, message: &str, at: &str) -> Result<(), TransitionError> {
        self.finish(task, TaskStatus::Failed, Some(message.to_owned()), at)
    }

    fn finish(&mut self, task: Task, status: TaskStatus, message: Option<String>, at: &str) -> Result<(), TransitionError> {
        let state = self.tasks.entry(task).or_default();
        if state.status != TaskStatus::Running {
            return Err(TransitionError::NotRunning(task));
        }
        state.status = status;
        state.message = message;
        state.finished_at = Some(at.to_owned());
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        TASKS.iter().all(|t| self.status(*t) == TaskStatus::Complete)
    }

    pub fn has_failed(&self) -> bool {
        TASKS.iter().any(|t| self.status(*t) == TaskStatus::Failed)
    }

    /// A run blocks new runs of its profile until it completes or fails.
    pub fn is_active(&self) -> bool {
        !self.is_complete() && !self.has_failed()
    }

    /// The next task to run, if any.
    pub fn next_task(&self) -> Option<Task> {
        TASKS.iter().copied().find(|t| self.status(*t) != TaskStatus::Complete)
    }
}

/// Threshold metrics exceeded by `counts` measured against `baseline`
/// records. No alerts on a first run or against an empty baseline.
pub fn exceeded_thresholds(counts: &Counts, baseline: u64, thresholds: &Thresholds, first_run: bool) -> Vec<(Metric, f64, f64)> {
    if first_run || baseline == 0 {
        return Vec::new();
    }
    let b = baseline as f64;
    [
        (Metric::AddedFrac, counts.added, thresholds.added_frac),
        (Metric::ChangedFrac, counts.changed, thresholds.changed_frac),
        (Metric::DeletedFrac, counts.deleted, thresholds.deleted_frac),
    ]
    .into_iter()
    .map(|(m, n, t)| (m, n as f64 / b, t))
    .filter(|(_, frac, t)| frac > t)
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> IngestionDocument {
        IngestionDocument::new("demo", 1, Vec::new(), "2026-01-01T00:00:00Z")
    }

    fn run(d: &mut IngestionDocument, t: Task) -> Result<(), TransitionError> {
        d.begin(t, "t")?;
        d.complete(t, "t")
    }

    #[test]
    fn in_order_completes() {
        let mut d = doc();
        assert!(d.is_active());
        for t in TASKS {
            run(&mut d, t).unwrap();
        }
        assert!(d.is_complete());
        assert!(!d.is_active());
        assert_eq!(d.run_id, "demo-1");
    }

    #[test]
    fn out_of_order_is_rejected() {
        let mut d = doc();
        assert_eq!(d.begin(Task::Save, "t"), Err(TransitionError::OutOfOrder { task: Task::Save, requires: Task::Enrich }));
        run(&mut d, Task::Fetch).unwrap();
        assert_eq!(d.begin(Task::Fetch, "t"), Err(TransitionError::Complete(Task::Fetch)));
        d.begin(Task::Enrich, "t").unwrap();
        assert_eq!(d.begin(Task::Enrich, "t"), Err(TransitionError::Running(Task::Enrich)));
        d.fail(Task::Enrich, "boom", "t").unwrap();
        assert!(!d.is_active());
        // failed tasks may be retried
        run(&mut d, Task::Enrich).unwrap();
        assert_eq!(d.complete(Task::Save, "t"), Err(TransitionError::NotRunning(Task::Save)));
    }

    #[test]
    fn task_names() {
        for t in TASKS {
            assert_eq!(Task::parse(t.as_str()), Some(t));
            assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
        }
        assert_eq!(Task::parse("delete"), Some(Task::RemoveDeleted));
        assert_eq!(Task::parse("check"), Some(Task::CheckCounts));
    }

    #[test]
    fn thresholds() {
        let t = Thresholds::default();
        let counts = Counts { deleted: 150, changed: 100, ..Default::default() };
        let hits = exceeded_thresholds(&counts, 1000, &t, false);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, Metric::DeletedFrac);
        assert!((hits[0].1 - 0.15).abs() < 1e-12);
        assert!(exceeded_thresholds(&counts, 1000, &t, true).is_empty());
        // equal to the threshold is not above it
        let at = Counts { deleted: 100, ..Default::default() };
        assert!(exceeded_thresholds(&at, 1000, &t, false).is_empty());
    }
}
