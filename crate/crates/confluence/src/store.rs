//! Record and run-document persistence.
//!
//! Records live in two areas. Saves write to staging; promotion copies a
//! profile's staging set over its production set in one transaction.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use confluence_core::ingestion::IngestionDocument;
use rusqlite::{params, Connection, OptionalExtension};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Area {
    Staging,
    Production,
}

impl Area {
    pub fn as_str(self) -> &'static str {
        match self {
            Area::Staging => "staging",
            Area::Production => "production",
        }
    }

    pub fn parse(s: &str) -> Option<Area> {
        match s {
            "staging" => Some(Area::Staging),
            "production" => Some(Area::Production),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredRecord {
    pub id: String,
    pub profile: String,
    /// Canonical JSON-LD. Empty for tombstones that never had a body.
    pub body: Vec<u8>,
    pub content_hash: String,
    pub last_seen_sequence: u64,
    pub deleted: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("stored run document is corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

pub trait Storage: Send + Sync {
    fn put_run(&self, doc: &IngestionDocument) -> Result<()>;
    fn get_run(&self, run_id: &str) -> Result<Option<IngestionDocument>>;
    /// Runs of `profile` (all profiles when `None`) in sequence order.
    fn runs(&self, profile: Option<&str>) -> Result<Vec<IngestionDocument>>;

    fn get_record(&self, area: Area, id: &str) -> Result<Option<StoredRecord>>;
    /// Upserts `records` atomically.
    fn put_records(&self, area: Area, records: &[StoredRecord]) -> Result<()>;
    /// Records of `profile` (all when `None`), tombstones included, by id.
    fn records(&self, area: Area, profile: Option<&str>) -> Result<Vec<StoredRecord>>;
    /// Makes `profile`'s production set a copy of its staging set, atomically.
    fn promote(&self, profile: &str) -> Result<u64>;
}

#[derive(Default)]
pub struct MemoryStore {
    inner: Mutex<Memory>,
}

#[derive(Default)]
struct Memory {
    runs: BTreeMap<String, IngestionDocument>,
    records: BTreeMap<(Area, String), StoredRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Memory> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Storage for MemoryStore {
    fn put_run(&self, doc: &IngestionDocument) -> Result<()> {
        self.lock().runs.insert(doc.run_id.clone(), doc.clone());
        Ok(())
    }

    fn get_run(&self, run_id: &str) -> Result<Option<IngestionDocument>> {
        Ok(self.lock().runs.get(run_id).cloned())
    }

    fn runs(&self, profile: Option<&str>) -> Result<Vec<IngestionDocument>> {
        let mut out: Vec<_> =
            self.lock().runs.values().filter(|d| profile.is_none_or(|p| d.profile_name == p)).cloned().collect();
        out.sort_by(|a, b| (&a.profile_name, a.sequence).cmp(&(&b.profile_name, b.sequence)));
        Ok(out)
    }

    fn get_record(&self, area: Area, id: &str) -> Result<Option<StoredRecord>> {
        Ok(self.lock().records.get(&(area, id.to_owned())).cloned())
    }

    fn put_records(&self, area: Area, records: &[StoredRecord]) -> Result<()> {
        let mut m = self.lock();
        for r in records {
            m.records.insert((area, r.id.clone()), r.clone());
        }
        Ok(())
    }

    fn records(&self, area: Area, profile: Option<&str>) -> Result<Vec<StoredRecord>> {
        Ok(self
            .lock()
            .records
            .iter()
            .filter(|((a, _), r)| *a == area && profile.is_none_or(|p| r.profile == p))
            .map(|(_, r)| r.clone())
            .collect())
    }

    fn promote(&self, profile: &str) -> Result<u64> {
        let mut m = self.lock();
        m.records.retain(|(a, _), r| !(*a == Area::Production && r.profile == profile));
        let staged: Vec<StoredRecord> =
            m.records.iter().filter(|((a, _), r)| *a == Area::Staging && r.profile == profile).map(|(_, r)| r.clone()).collect();
        let n = staged.len() as u64;
        for r in staged {
            m.records.insert((Area::Production, r.id.clone()), r);
        }
        Ok(n)
    }
}

/// Single-file SQLite storage.
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS runs (
    run_id   TEXT PRIMARY KEY,
    profile  TEXT NOT NULL,
    sequence INTEGER NOT NULL,
    doc      TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS records (
    area      TEXT NOT NULL,
    id        TEXT NOT NULL,
    profile   TEXT NOT NULL,
    body      BLOB NOT NULL,
    hash      TEXT NOT NULL,
    last_seen INTEGER NOT NULL,
    deleted   INTEGER NOT NULL,
    PRIMARY KEY (area, id)
);
CREATE INDEX IF NOT EXISTS records_profile ON records (area, profile);
";

impl SqliteStore {
    pub fn open(path: &Path) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    pub fn in_memory() -> Result<Self> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn row_record(row: &rusqlite::Row<'_>) -> rusqlite::Result<StoredRecord> {
    Ok(StoredRecord {
        id: row.get(0)?,
        profile: row.get(1)?,
        body: row.get(2)?,
        content_hash: row.get(3)?,
        last_seen_sequence: row.get::<_, i64>(4)? as u64,
        deleted: row.get::<_, i64>(5)? != 0,
    })
}

impl Storage for SqliteStore {
    fn put_run(&self, doc: &IngestionDocument) -> Result<()> {
        let json = serde_json::to_string(doc)?;
        self.conn().execute(
            "INSERT INTO runs (run_id, profile, sequence, doc) VALUES (?1, ?2, ?3, ?4)
             ON CONFLICT(run_id) DO UPDATE SET doc = excluded.doc",
            params![doc.run_id, doc.profile_name, doc.sequence as i64, json],
        )?;
        Ok(())
    }

    fn get_run(&self, run_id: &str) -> Result<Option<IngestionDocument>> {
        let doc: Option<String> =
            self.conn().query_row("SELECT doc FROM runs WHERE run_id = ?1", [run_id], |r| r.get(0)).optional()?;
        Ok(doc.map(|d| serde_json::from_str(&d)).transpose()?)
    }

    fn runs(&self, profile: Option<&str>) -> Result<Vec<IngestionDocument>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT doc FROM runs WHERE ?1 IS NULL OR profile = ?1 ORDER BY profile, sequence",
        )?;
        let docs = stmt.query_map([profile], |r| r.get::<_, String>(0))?.collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(docs.iter().map(|d| serde_json::from_str(d)).collect::<serde_json::Result<_>>()?)
    }

    fn get_record(&self, area: Area, id: &str) -> Result<Option<StoredRecord>> {
        Ok(self
            .conn()
            .query_row(
                "SELECT id, profile, body, hash, last_seen, deleted FROM records WHERE area = ?1 AND id = ?2",
                [area.as_str(), id],
                row_record,
            )
            .optional()?)
    }

    fn put_records(&self, area: Area, records: &[StoredRecord]) -> Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        {
            let mut stmt = tx.prepare_cached(
                "INSERT INTO records (area, id, profile, body, hash, last_seen, deleted) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)
                 ON CONFLICT(area, id) DO UPDATE SET profile = excluded.profile, body = excluded.body,
                 hash = excluded.hash, last_seen = excluded.last_seen, deleted = excluded.deleted",
            )?;
            for r in records {
                stmt.execute(params![
                    area.as_str(),
                    r.id,
                    r.profile,
                    r.body,
                    r.content_hash,
                    r.last_seen_sequence as i64,
                    r.deleted as i64
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn records(&self, area: Area, profile: Option<&str>) -> Result<Vec<StoredRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT id, profile, body, hash, last_seen, deleted FROM records
             WHERE area = ?1 AND (?2 IS NULL OR profile = ?2) ORDER BY id",
        )?;
        let rows = stmt.query_map(params![area.as_str(), profile], row_record)?.collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(rows)
    }

    fn promote(&self, profile: &str) -> Result<u64> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        tx.execute("DELETE FROM records WHERE area = 'production' AND profile = ?1", [profile])?;
        let n = tx.execute(
            "INSERT INTO records (area, id, profile, body, hash, last_seen, deleted)
             SELECT 'production', id, profile, body, hash, last_seen, deleted FROM records
             WHERE area = 'staging' AND profile = ?1",
            [profile],
        )?;
        tx.commit()?;
        Ok(n as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, profile: &str, deleted: bool) -> StoredRecord {
        StoredRecord {
            id: id.into(),
            profile: profile.into(),
            body: b"{}".to_vec(),
            content_hash: "h".into(),
            last_seen_sequence: 1,
            deleted,
        }
    }

    fn exercise(store: &dyn Storage) {
        store.put_records(Area::Staging, &[rec("b", "p", false), rec("a", "p", true), rec("c", "q", false)]).unwrap();
        let ids: Vec<_> = store.records(Area::Staging, Some("p")).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(store.records(Area::Staging, None).unwrap().len(), 3);
        assert!(store.get_record(Area::Production, "a").unwrap().is_none());

        store.put_records(Area::Production, &[rec("stale", "p", false), rec("other", "q", false)]).unwrap();
        assert_eq!(store.promote("p").unwrap(), 2);
        let prod: Vec<_> = store.records(Area::Production, Some("p")).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(prod, ["a", "b"]);
        assert_eq!(store.records(Area::Production, Some("q")).unwrap().len(), 1);
        assert!(store.get_record(Area::Production, "a").unwrap().unwrap().deleted);

        let mut doc = IngestionDocument::new("p", 2, vec![], "t");
        store.put_run(&doc).unwrap();
        store.put_run(&IngestionDocument::new("p", 1, vec![], "t")).unwrap();
        doc.counts.added = 5;
        store.put_run(&doc).unwrap();
        assert_eq!(store.get_run("p-2").unwrap().unwrap().counts.added, 5);
        let seqs: Vec<_> = store.runs(Some("p")).unwrap().iter().map(|d| d.sequence).collect();
        assert_eq!(seqs, [1, 2]);
        assert!(store.runs(Some("q")).unwrap().is_empty());
    }

    #[test]
    fn memory_store() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn sqlite_store() {
        exercise(&SqliteStore::in_memory().unwrap());
    }
}
