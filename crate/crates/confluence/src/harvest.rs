//! Harvesting: OAI-PMH `ListRecords` over HTTP and XML files matched by a
//! glob. Both yield [`RawRecord`]s lazily.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::thread::sleep;
use std::time::Duration;

use confluence_core::enrich::select_local_id;
use confluence_core::profile::{HarvestKind, HarvestSpec};
use confluence_core::tree::MetadataTree;
use serde::{Deserialize, Serialize};

use crate::xml::{parse_with_spans, XmlError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RawRecord {
    pub local_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datestamp: Option<String>,
    #[serde(default)]
    pub deleted: bool,
    #[serde(default)]
    pub tree: MetadataTree,
    /// The record's bytes as served. Not staged.
    #[serde(skip)]
    pub source_bytes: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarvestError {
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("request to {url} failed: {message}")]
    Network { url: String, message: String },
    #[error("OAI-PMH error {code}: {message}")]
    Oai { code: String, message: String },
    #[error("{source_name}: {error}")]
    Xml { source_name: String, error: XmlError },
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("bad file pattern {0:?}")]
    Pattern(String),
    #[error("{source_name}: record {index} has no identifier at {id_path}")]
    MissingId { source_name: String, index: usize, id_path: String },
    #[error("{0}")]
    Config(String),
}

impl HarvestError {
    /// Errors that lose one record without ending the harvest.
    pub fn is_record_level(&self) -> bool {
        matches!(self, HarvestError::MissingId { .. })
    }
}

/// Retry and pacing settings for the OAI client.
#[derive(Clone, Debug)]
pub struct OaiOptions {
    pub attempts: u32,
    /// First retry waits this long; each further retry doubles it.
    pub backoff: Duration,
    pub request_delay: Duration,
    pub timeout: Duration,
}

impl Default for OaiOptions {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(500),
            request_delay: Duration::ZERO,
            timeout: Duration::from_secs(60),
        }
    }
}

pub type RecordStream = Box<dyn Iterator<Item = Result<RawRecord, HarvestError>> + Send>;

/// Records for `spec`, from whichever source kind it names.
pub fn harvest(spec: &HarvestSpec, options: OaiOptions) -> Result<RecordStream, HarvestError> {
    match spec.kind {
        HarvestKind::Oai => {
            let options = OaiOptions { request_delay: Duration::from_millis(spec.request_delay), ..options };
            Ok(Box::new(OaiClient::new(&spec.endpoint, options).list_records(&spec.metadata_prefix, spec.sets.clone())))
        }
        HarvestKind::File => Ok(Box::new(fetch_files(spec)?)),
    }
}

pub struct OaiClient {
    agent: ureq::Agent,
    base: String,
    options: OaiOptions,
    requests: u32,
}

impl OaiClient {
    pub fn new(base: &str, options: OaiOptions) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(options.timeout))
            .build()
            .into();
        Self { agent, base: base.to_owned(), options, requests: 0 }
    }

    /// Issues one OAI-PMH request, retrying network failures, 5xx and 429.
    pub fn request(&mut self, query: &[(&str, &str)]) -> Result<Vec<u8>, HarvestError> {
        if self.requests > 0 && !self.options.request_delay.is_zero() {
            sleep(self.options.request_delay);
        }
        self.requests += 1;
        let mut wait = self.options.backoff;
        let mut attempt = 1;
        loop {
            let result = self.agent.get(&self.base).query_pairs(query.iter().copied()).call();
            let retryable = match result {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if resp.status().is_success() {
                        return resp
                            .body_mut()
                            .with_config()
                            .limit(256 * 1024 * 1024)
                            .read_to_vec()
                            .map_err(|e| HarvestError::Network { url: self.base.clone(), message: e.to_string() });
                    }
                    let err = HarvestError::Http { status, url: self.base.clone() };
                    if status >= 500 || status == 429 {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => HarvestError::Network { url: self.base.clone(), message: e.to_string() },
            };
            if attempt >= self.options.attempts {
                return Err(retryable);
            }
            sleep(wait);
            wait *= 2;
            attempt += 1;
        }
    }

    pub fn identify(&mut self) -> Result<MetadataTree, HarvestError> {
        let body = self.request(&[("verb", "Identify")])?;
        let (tree, _) = parse_response(&body, &self.base)?;
        check_error(&tree)?;
        child(&tree, "Identify").cloned().ok_or_else(|| missing(&self.base, "Identify"))
    }

    /// Header identifiers and deleted flags, following resumption tokens.
    pub fn list_identifiers(&mut self, prefix: &str, set: Option<&str>) -> Result<Vec<(String, bool)>, HarvestError> {
        let mut out = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut q = vec![("verb", "ListIdentifiers")];
            match &token {
                Some(t) => q.push(("resumptionToken", t.as_str())),
                None => {
                    q.push(("metadataPrefix", prefix));
                    if let Some(s) = set {
                        q.push(("set", s));
                    }
                }
            }
            let body = self.request(&q)?;
            let (tree, _) = parse_response(&body, &self.base)?;
            if no_records(&tree)? {
                return Ok(out);
            }
            let list = child(&tree, "ListIdentifiers").ok_or_else(|| missing(&self.base, "ListIdentifiers"))?;
            for h in list.children.iter().filter(|c| c.local_name() == "header") {
                let id = child(h, "identifier").and_then(|i| i.text.clone()).unwrap_or_default();
                out.push((id.trim().to_owned(), h.attr("status") == Some("deleted")));
            }
            token = resumption_token(list);
            if token.is_none() {
                return Ok(out);
            }
        }
    }

    /// A lazy `ListRecords` harvest over each of `sets`, or the whole
    /// repository when there are none.
    pub fn list_records(self, prefix: &str, sets: Option<Vec<String>>) -> OaiRecords {
        let sets: VecDeque<Option<String>> = match sets {
            Some(s) if !s.is_empty() => s.into_iter().map(Some).collect(),
            _ => VecDeque::from([None]),
        };
        OaiRecords { client: self, prefix: prefix.to_owned(), sets, state: Page::Start, buffer: VecDeque::new() }
    }

    pub fn requests_made(&self) -> u32 {
        self.requests
    }
}

pub struct OaiRecords {
    client: OaiClient,
    prefix: String,
    sets: VecDeque<Option<String>>,
    state: Page,
    buffer: VecDeque<RawRecord>,
}

enum Page {
    Start,
    Token(String),
    Done,
}

impl OaiRecords {
    fn fetch_page(&mut self) -> Result<(), HarvestError> {
        let set = self.sets.front().cloned().flatten();
        let body = {
            let mut q = vec![("verb", "ListRecords")];
            match &self.state {
                Page::Token(t) => q.push(("resumptionToken", t.as_str())),
                _ => {
                    q.push(("metadataPrefix", self.prefix.as_str()));
                    if let Some(s) = &set {
                        q.push(("set", s.as_str()));
                    }
                }
            }
            self.client.request(&q)?
        };
        let base = self.client.base.clone();
        let (tree, spans) = parse_response(&body, &base)?;
        if no_records(&tree)? {
            self.next_set();
            return Ok(());
        }
        let list_index = tree
            .children
            .iter()
            .position(|c| c.local_name() == "ListRecords")
            .ok_or_else(|| missing(&base, "ListRecords"))?;
        let offset: usize = tree.children[..list_index].iter().map(|c| c.children.len()).sum();
        let list = &tree.children[list_index];
        for (i, rec) in list.children.iter().enumerate() {
            if rec.local_name() != "record" {
                continue;
            }
            let bytes = spans.get(offset + i).map(|s| body[s.clone()].to_vec()).unwrap_or_default();
            self.buffer.push_back(oai_record(rec, bytes, &base)?);
        }
        match resumption_token(list) {
            Some(t) => self.state = Page::Token(t),
            None => self.next_set(),
        }
        Ok(())
    }

    fn next_set(&mut self) {
        self.sets.pop_front();
        self.state = if self.sets.is_empty() { Page::Done } else { Page::Start };
    }

    pub fn requests_made(&self) -> u32 {
        self.client.requests
    }
}

impl Iterator for OaiRecords {
    type Item = Result<RawRecord, HarvestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.buffer.pop_front() {
                return Some(Ok(r));
            }
            if matches!(self.state, Page::Done) {
                return None;
            }
            if let Err(e) = self.fetch_page() {
                self.state = Page::Done;
                return Some(Err(e));
            }
        }
    }
}

fn parse_response(body: &[u8], url: &str) -> Result<(MetadataTree, Vec<std::ops::Range<usize>>), HarvestError> {
    parse_with_spans(body, Some(2)).map_err(|error| HarvestError::Xml { source_name: url.to_owned(), error })
}

fn child<'a>(tree: &'a MetadataTree, local: &str) -> Option<&'a MetadataTree> {
    tree.children.iter().find(|c| c.local_name() == local)
}

fn missing(url: &str, what: &str) -> HarvestError {
    HarvestError::Oai { code: "badResponse".into(), message: format!("{url}: response has no {what} element") }
}

fn check_error(tree: &MetadataTree) -> Result<(), HarvestError> {
    match child(tree, "error") {
        Some(e) => Err(HarvestError::Oai {
            code: e.attr("code").unwrap_or("unknown").to_owned(),
            message: e.text.clone().unwrap_or_default(),
        }),
        None => Ok(()),
    }
}

/// True for a `noRecordsMatch` response; other OAI errors are returned.
fn no_records(tree: &MetadataTree) -> Result<bool, HarvestError> {
    match check_error(tree) {
        Err(HarvestError::Oai { code, .. }) if code == "noRecordsMatch" => Ok(true),
        Err(e) => Err(e),
        Ok(()) => Ok(false),
    }
}

fn resumption_token(list: &MetadataTree) -> Option<String> {
    child(list, "resumptionToken").and_then(|t| t.text.as_deref()).map(str::trim).filter(|t| !t.is_empty()).map(ToOwned::to_owned)
}

fn oai_record(rec: &MetadataTree, source_bytes: Vec<u8>, url: &str) -> Result<RawRecord, HarvestError> {
    let header = child(rec, "header").ok_or_else(|| missing(url, "record header"))?;
    let local_id = child(header, "identifier").and_then(|i| i.text.as_deref()).map(str::trim).unwrap_or("");
    if local_id.is_empty() {
        return Err(missing(url, "header identifier"));
    }
    let deleted = header.attr("status") == Some("deleted");
    Ok(RawRecord {
        local_id: local_id.to_owned(),
        datestamp: child(header, "datestamp").and_then(|d| d.text.as_deref()).map(|d| d.trim().to_owned()),
        deleted,
        tree: if deleted { MetadataTree::default() } else { rec.clone() },
        source_bytes,
    })
}

/// Records from the XML files matching `spec.endpoint`, in path order.
pub fn fetch_files(spec: &HarvestSpec) -> Result<FileRecords, HarvestError> {
    let id_path = spec
        .id_path
        .clone()
        .ok_or_else(|| HarvestError::Config("file harvests need an idPath".into()))?;
    let mut paths: Vec<PathBuf> = glob::glob(&spec.endpoint)
        .map_err(|_| HarvestError::Pattern(spec.endpoint.clone()))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    Ok(FileRecords {
        paths: paths.into(),
        record_element: spec.record_element.clone(),
        id_path,
        pending: VecDeque::new(),
    })
}

pub struct FileRecords {
    paths: VecDeque<PathBuf>,
    record_element: Option<String>,
    id_path: String,
    pending: VecDeque<Result<RawRecord, HarvestError>>,
}

impl FileRecords {
    fn read_file(&mut self, path: PathBuf) {
        let name = path.display().to_string();
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(error) => {
                self.paths.clear();
                self.pending.push_back(Err(HarvestError::Io { path: name, error }));
                return;
            }
        };
        let (records, spans) = match self.split(&bytes) {
            Ok(r) => r,
            Err(error) => {
                self.paths.clear();
                self.pending.push_back(Err(HarvestError::Xml { source_name: name, error }));
                return;
            }
        };
        for (index, (tree, span)) in records.into_iter().zip(spans).enumerate() {
            let item = match select_local_id(&tree, &self.id_path) {
                Some(local_id) => Ok(RawRecord { local_id, datestamp: None, deleted: false, tree, source_bytes: bytes[span].to_vec() }),
                None => Err(HarvestError::MissingId { source_name: name.clone(), index, id_path: self.id_path.clone() }),
            };
            self.pending.push_back(item);
        }
    }

    fn split(&self, bytes: &[u8]) -> Result<(Vec<MetadataTree>, Vec<std::ops::Range<usize>>), XmlError> {
        let Some(container) = &self.record_element else {
            let (tree, _) = parse_with_spans(bytes, None)?;
            let whole = 0..bytes.len();
            return Ok((vec![tree], vec![whole]));
        };
        let (tree, _) = parse_with_spans(bytes, None)?;
        let Some((depth, offset)) = locate(&tree, container) else {
            return Ok((Vec::new(), Vec::new()));
        };
        let (tree, spans) = parse_with_spans(bytes, Some(depth + 1))?;
        let node = nodes_at(&tree, depth)[offset.0];
        let records: Vec<MetadataTree> = node.children.clone();
        let spans = spans[offset.1..offset.1 + records.len()].to_vec();
        Ok((records, spans))
    }
}

/// Depth of the first element named `container` (pre-order), its index
/// among elements at that depth, and the number of elements at the next
/// depth that precede its children.
fn locate(tree: &MetadataTree, container: &str) -> Option<(usize, (usize, usize))> {
    fn find(t: &MetadataTree, name: &str, depth: usize) -> Option<(usize, *const MetadataTree)> {
        if t.name == name || t.local_name() == name {
            return Some((depth, t as *const _));
        }
        t.children.iter().find_map(|c| find(c, name, depth + 1))
    }
    let (depth, ptr) = find(tree, container, 0)?;
    let level = nodes_at(tree, depth);
    let index = level.iter().position(|n| std::ptr::eq(*n, ptr))?;
    let before: usize = level[..index].iter().map(|n| n.children.len()).sum();
    Some((depth, (index, before)))
}

fn nodes_at(tree: &MetadataTree, depth: usize) -> Vec<&MetadataTree> {
    let mut level = vec![tree];
    for _ in 0..depth {
        level = level.into_iter().flat_map(|n| n.children.iter()).collect();
    }
    level
}

impl Iterator for FileRecords {
    type Item = Result<RawRecord, HarvestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(item) = self.pending.pop_front() {
                return Some(item);
            }
            let path = self.paths.pop_front()?;
            self.read_file(path);
        }
    }
}
