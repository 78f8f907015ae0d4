//! A small OAI-PMH 2.0 provider serving records from memory, for tests and
//! the `mock-oai` subcommand. Supports paging, sets, deleted records and
//! injected HTTP 503s.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use confluence_core::tree::MetadataTree;
use tokio::sync::oneshot;

use crate::xml::{parse_xml, write_xml, XmlError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MockRecord {
    pub identifier: String,
    pub datestamp: String,
    pub sets: Vec<String>,
    pub deleted: bool,
    /// The element placed inside `<metadata>`.
    pub metadata: MetadataTree,
}

impl MockRecord {
    pub fn new(identifier: impl Into<String>, metadata: MetadataTree) -> Self {
        Self { identifier: identifier.into(), datestamp: "2024-01-01".into(), sets: Vec::new(), deleted: false, metadata }
    }

    /// The OAI `record` element for this record.
    pub fn to_tree(&self) -> MetadataTree {
        let mut h = MetadataTree::new("oai:header")
            .with_child(MetadataTree::leaf("oai:identifier", &self.identifier))
            .with_child(MetadataTree::leaf("oai:datestamp", &self.datestamp));
        for s in &self.sets {
            h = h.with_child(MetadataTree::leaf("oai:setSpec", s));
        }
        if self.deleted {
            h = h.with_attr("status", "deleted");
            return MetadataTree::new("oai:record").with_child(h);
        }
        MetadataTree::new("oai:record").with_child(h).with_child(MetadataTree::new("oai:metadata").with_child(self.metadata.clone()))
    }

    fn from_tree(rec: &MetadataTree) -> Option<Self> {
        let header = rec.children.iter().find(|c| c.local_name() == "header")?;
        let text = |name: &'static str| {
            header.children.iter().filter(move |c| c.local_name() == name).filter_map(|c| c.text.as_deref()).map(str::trim)
        };
        let identifier = text("identifier").next()?.to_owned();
        let metadata = rec
            .children
            .iter()
            .find(|c| c.local_name() == "metadata")
            .and_then(|m| m.children.first())
            .cloned()
            .unwrap_or_default();
        Some(Self {
            identifier,
            datestamp: text("datestamp").next().unwrap_or("2024-01-01").to_owned(),
            sets: text("setSpec").map(ToOwned::to_owned).collect(),
            deleted: header.attr("status") == Some("deleted"),
            metadata,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Xml(String, XmlError),
}

/// Every OAI `record` element in the `*.xml` files of `dir`, in file-name
/// then document order.
pub fn load_fixture_dir(dir: &Path) -> Result<Vec<MockRecord>, FixtureError> {
    let io = |e| FixtureError::Io(dir.display().to_string(), e);
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let name = f.display().to_string();
        let bytes = std::fs::read(&f).map_err(|e| FixtureError::Io(name.clone(), e))?;
        let tree = parse_xml(&bytes).map_err(|e| FixtureError::Xml(name, e))?;
        collect(&tree, &mut out);
    }
    Ok(out)
}

fn collect(tree: &MetadataTree, out: &mut Vec<MockRecord>) {
    if tree.local_name() == "record" {
        out.extend(MockRecord::from_tree(tree));
        return;
    }
    for c in &tree.children {
        collect(c, out);
    }
}

struct Shared {
    records: RwLock<Vec<MockRecord>>,
    page_size: AtomicUsize,
    requests: AtomicU32,
    fail_next: AtomicU32,
    /// Requests numbered at or above this answer 503. Zero disables.
    fail_after: AtomicU32,
    base_url: String,
}

/// A running mock provider. Stops when dropped.
pub struct MockOai {
    shared: Arc<Shared>,
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockOai {
    /// Binds `127.0.0.1:port` (0 picks a free port) and serves `records`.
    pub fn start(records: Vec<MockRecord>, page_size: usize, port: u16) -> std::io::Result<Self> {
        Self::start_on(([127, 0, 0, 1], port).into(), records, page_size)
    }

    pub fn start_on(addr: SocketAddr, records: Vec<MockRecord>, page_size: usize) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            records: RwLock::new(records),
            page_size: AtomicUsize::new(page_size.max(1)),
            requests: AtomicU32::new(0),
            fail_next: AtomicU32::new(0),
            fail_after: AtomicU32::new(0),
            base_url: format!("http://{addr}/oai"),
        });
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new().route("/oai", get(handle)).with_state(shared.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { shared, addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        self.shared.base_url.clone()
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// HTTP requests received so far, including failed ones.
    pub fn requests(&self) -> u32 {
        self.shared.requests.load(Ordering::SeqCst)
    }

    pub fn reset_requests(&self) {
        self.shared.requests.store(0, Ordering::SeqCst);
    }

    /// Answer the next `n` requests with 503.
    pub fn fail_next(&self, n: u32) {
        self.shared.fail_next.store(n, Ordering::SeqCst);
    }

    /// Answer every request after the first `n` (counted from now) with 503.
    pub fn fail_after(&self, n: Option<u32>) {
        let limit = n.map_or(0, |n| self.requests() + n + 1);
        self.shared.fail_after.store(limit, Ordering::SeqCst);
    }

    pub fn set_page_size(&self, n: usize) {
        self.shared.page_size.store(n.max(1), Ordering::SeqCst);
    }

    pub fn set_records(&self, records: Vec<MockRecord>) {
        *self.shared.records.write().expect("records lock") = records;
    }

    pub fn records(&self) -> Vec<MockRecord> {
        self.shared.records.read().expect("records lock").clone()
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockOai {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn handle(State(shared): State<Arc<Shared>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let n = shared.requests.fetch_add(1, Ordering::SeqCst) + 1;
    let injected = shared.fail_next.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| v.checked_sub(1)).is_ok();
    let limit = shared.fail_after.load(Ordering::SeqCst);
    if injected || (limit > 0 && n >= limit) {
        return (StatusCode::SERVICE_UNAVAILABLE, "unavailable").into_response();
    }
    let body = respond(&shared, &q);
    ([(header::CONTENT_TYPE, "text/xml; charset=utf-8")], write_xml(&body)).into_response()
}

fn respond(shared: &Shared, q: &HashMap<String, String>) -> MetadataTree {
    let mut request = MetadataTree::leaf("oai:request", &shared.base_url);
    let mut keys: Vec<_> = q.iter().collect();
    keys.sort();
    for (k, v) in keys {
        request = request.with_attr(k.as_str(), v.as_str());
    }
    let root = MetadataTree::new("oai:OAI-PMH")
        .with_child(MetadataTree::leaf("oai:responseDate", "2024-01-01T00:00:00Z"))
        .with_child(request);
    let body = match q.get("verb").map(String::as_str) {
        Some("Identify") => Ok(identify(shared)),
        Some(verb @ ("ListRecords" | "ListIdentifiers")) => list(shared, q, verb),
        Some(_) => Err(("badVerb", "illegal verb")),
        None => Err(("badVerb", "missing verb")),
    };
    match body {
        Ok(b) => root.with_child(b),
        Err((code, message)) => root.with_child(MetadataTree::leaf("oai:error", message).with_attr("code", code)),
    }
}

fn identify(shared: &Shared) -> MetadataTree {
    MetadataTree::new("oai:Identify")
        .with_child(MetadataTree::leaf("oai:repositoryName", "Mock OAI provider"))
        .with_child(MetadataTree::leaf("oai:baseURL", &shared.base_url))
        .with_child(MetadataTree::leaf("oai:protocolVersion", "2.0"))
        .with_child(MetadataTree::leaf("oai:earliestDatestamp", "2000-01-01"))
        .with_child(MetadataTree::leaf("oai:deletedRecord", "persistent"))
        .with_child(MetadataTree::leaf("oai:granularity", "YYYY-MM-DD"))
}

type OaiError = (&'static str, &'static str);

fn list(shared: &Shared, q: &HashMap<String, String>, verb: &str) -> Result<MetadataTree, OaiError> {
    let (offset, prefix, set) = match q.get("resumptionToken") {
        Some(token) => {
            if q.len() != 2 {
                return Err(("badArgument", "resumptionToken is an exclusive argument"));
            }
            let mut parts = token.splitn(3, '|');
            let offset = parts.next().and_then(|o| o.parse::<usize>().ok());
            match (offset, parts.next(), parts.next()) {
                (Some(o), Some(p), Some(s)) => (o, p.to_owned(), Some(s.to_owned()).filter(|s| !s.is_empty())),
                _ => return Err(("badResumptionToken", "unrecognized resumption token")),
            }
        }
        None => {
            let prefix = q.get("metadataPrefix").ok_or(("badArgument", "metadataPrefix is required"))?;
            (0, prefix.clone(), q.get("set").cloned())
        }
    };
    let records = shared.records.read().expect("records lock");
    let selected: Vec<&MockRecord> = records.iter().filter(|r| set.as_ref().is_none_or(|s| r.sets.contains(s))).collect();
    if selected.is_empty() {
        return Err(("noRecordsMatch", "no records match the request"));
    }
    if offset > selected.len() {
        return Err(("badResumptionToken", "resumption token is past the end of the list"));
    }
    let page = shared.page_size.load(Ordering::SeqCst);
    let end = (offset + page).min(selected.len());
    let mut out = MetadataTree::new(format!("oai:{verb}"));
    for r in &selected[offset..end] {
        let rec = r.to_tree();
        out.children.push(if verb == "ListIdentifiers" { rec.children[0].clone() } else { rec });
    }
    let total = selected.len().to_string();
    if end < selected.len() {
        let token = format!("{end}|{prefix}|{}", set.unwrap_or_default());
        out.children.push(
            MetadataTree::leaf("oai:resumptionToken", token)
                .with_attr("completeListSize", total)
                .with_attr("cursor", offset.to_string()),
        );
    } else if offset > 0 {
        out.children.push(
            MetadataTree::new("oai:resumptionToken").with_attr("completeListSize", total).with_attr("cursor", offset.to_string()),
        );
    }
    Ok(out)
}
