//! Structural diff of record views, and its inverse.
//!
//! A view is a JSON value whose leaves are strings; empty objects and arrays
//! are pruned before diffing. The diff walks both trees in parallel and
//! emits one change per leaf, addressed by slash path. Lists are compared
//! index by index: shared indices first (ascending), then appended tail
//! members (ascending) or removed tail members (descending); a removed
//! subtree lists its last leaf first. That ordering is what lets [`revert`]
//! undo a change list by walking it backwards.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};

use crate::model::{ProvenanceAction, ProvenanceEntry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Change {
    pub field_path: String,
    pub action: ProvenanceAction,
    pub prior_value: Option<String>,
    pub new_value: Option<String>,
}

/// Removes empty objects, empty arrays and nulls, recursively.
pub fn prune(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for v in map.values_mut() {
                prune(v);
            }
            map.retain(|_, v| !is_void(v));
        }
        Value::Array(items) => {
            for v in items.iter_mut() {
                prune(v);
            }
            items.retain(|v| !is_void(v));
        }
        _ => {}
    }
}

fn is_void(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Object(m) => m.is_empty(),
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

fn leaf_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn join(path: &str, segment: &str) -> String {
    if path.is_empty() {
        segment.to_owned()
    } else {
        format!("{path}/{segment}")
    }
}

/// Changes turning `before` into `after`. Both must be pruned.
pub fn diff(before: &Value, after: &Value) -> Vec<Change> {
    let mut out = Vec::new();
    diff_at("", before, after, &mut out);
    out
}

fn diff_at(path: &str, a: &Value, b: &Value, out: &mut Vec<Change>) {
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                let p = join(path, key);
                match (ma.get(key), mb.get(key)) {
                    (Some(x), Some(y)) => diff_at(&p, x, y, out),
                    (Some(x), None) => deleted(&p, x, out),
                    (None, Some(y)) => leaves(&p, y, ProvenanceAction::Add, out),
                    (None, None) => {}
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) => {
            let shared = xa.len().min(xb.len());
            for i in 0..shared {
                diff_at(&join(path, &i.to_string()), &xa[i], &xb[i], out);
            }
            for (i, y) in xb.iter().enumerate().skip(shared) {
                leaves(&join(path, &i.to_string()), y, ProvenanceAction::Add, out);
            }
            let from = out.len();
            for (i, x) in xa.iter().enumerate().skip(shared) {
                leaves(&join(path, &i.to_string()), x, ProvenanceAction::Delete, out);
            }
            out[from..].reverse();
        }
        (x, y) if !x.is_object() && !x.is_array() && !y.is_object() && !y.is_array() => {
            if x != y {
                out.push(Change {
                    field_path: path.to_owned(),
                    action: ProvenanceAction::Modify,
                    prior_value: Some(leaf_text(x)),
                    new_value: Some(leaf_text(y)),
                });
            }
        }
        (x, y) => {
            deleted(path, x, out);
            leaves(path, y, ProvenanceAction::Add, out);
        }
    }
}

/// Deletions come last-leaf-first so that undoing them in reverse rebuilds
/// arrays from index 0 up.
fn deleted(path: &str, v: &Value, out: &mut Vec<Change>) {
    let from = out.len();
    leaves(path, v, ProvenanceAction::Delete, out);
    out[from..].reverse();
}

/// One change per leaf under `v`, in document order.
fn leaves(path: &str, v: &Value, action: ProvenanceAction, out: &mut Vec<Change>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                leaves(&join(path, k), child, action, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                leaves(&join(path, &i.to_string()), child, action, out);
            }
        }
        Value::Null => {}
        leaf => {
            let text = Some(leaf_text(leaf));
            let (prior_value, new_value) = match action {
                ProvenanceAction::Add => (None, text),
                _ => (text, None),
            };
            out.push(Change { field_path: path.to_owned(), action, prior_value, new_value });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot revert {action:?} at {path}")]
pub struct RevertError {
    pub path: String,
    pub action: ProvenanceAction,
}

/// Undoes `entries` (in reverse order) on a pruned view. The result is
/// pruned.
pub fn revert(view: &mut Value, entries: &[ProvenanceEntry]) -> Result<(), RevertError> {
    for e in entries.iter().rev() {
        let err = || RevertError { path: e.field_path.clone(), action: e.action };
        let segments: Vec<&str> = e.field_path.split('/').collect();
        match e.action {
            ProvenanceAction::Add => {
                remove_at(view, &segments).ok_or_else(err)?;
            }
            ProvenanceAction::Delete | ProvenanceAction::Modify => {
                let prior = e.prior_value.clone().ok_or_else(err)?;
                set_at(view, &segments, Value::String(prior)).ok_or_else(err)?;
            }
        }
    }
    prune(view);
    Ok(())
}

fn container_for(segment: &str) -> Value {
    if segment.parse::<usize>().is_ok() {
        Value::Array(Vec::new())
    } else {
        Value::Object(Map::new())
    }
}

/// Null, or a container holding only shells.
fn is_shell(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Object(m) => m.values().all(is_shell),
        Value::Array(a) => a.iter().all(is_shell),
        _ => false,
    }
}

fn set_at(node: &mut Value, segments: &[&str], leaf: Value) -> Option<()> {
    let (first, rest) = segments.split_first()?;
    let fits = match node {
        Value::Array(_) => first.parse::<usize>().is_ok(),
        Value::Object(_) => first.parse::<usize>().is_err(),
        _ => false,
    };
    if !fits && is_shell(node) {
        *node = container_for(first);
    }
    let fresh = || rest.first().map_or(Value::Null, |s| container_for(s));
    let slot: &mut Value = match node {
        Value::Object(map) => {
            if rest.is_empty() {
                map.insert((*first).to_owned(), leaf);
                return Some(());
            }
            map.entry(*first).or_insert_with(fresh)
        }
        Value::Array(items) => {
            let i: usize = first.parse().ok()?;
            if i > items.len() {
                return None;
            }
            if rest.is_empty() {
                if i == items.len() {
                    items.push(leaf);
                } else {
                    items[i] = leaf;
                }
                return Some(());
            }
            if i == items.len() {
                items.push(fresh());
            }
            &mut items[i]
        }
        _ => return None,
    };
    set_at(slot, rest, leaf)
}

/// Removes the leaf at `segments`. Array members become null rather than
/// shifting their successors, whose paths later entries still use.
fn remove_at(node: &mut Value, segments: &[&str]) -> Option<()> {
    let (first, rest) = segments.split_first()?;
    match node {
        Value::Object(map) => {
            if rest.is_empty() {
                map.remove(*first)?;
            } else {
                let child = map.get_mut(*first)?;
                remove_at(child, rest)?;
                if is_shell(child) {
                    map.remove(*first);
                }
            }
        }
        Value::Array(items) => {
            let i: usize = first.parse().ok()?;
            if i >= items.len() {
                return None;
            }
            if rest.is_empty() {
                items[i] = Value::Null;
            } else {
                remove_at(&mut items[i], rest)?;
                if is_shell(&items[i]) {
                    items[i] = Value::Null;
                }
            }
        }
        _ => return None,
    }
    Some(())
}
