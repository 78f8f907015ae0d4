//! A caching wrapper around a [`Geocoder`], persisted per run directory.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use confluence_core::geocode::{ChainLink, GeocodeMatch, Geocoder};
use confluence_core::model::{Coordinates, MatchLevel};
use serde::{Deserialize, Serialize};

pub struct CachedGeocoder {
    inner: Arc<dyn Geocoder>,
    names: RwLock<HashMap<String, Option<GeocodeMatch>>>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    snapshot: String,
    names: HashMap<String, Option<GeocodeMatch>>,
}

fn key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl CachedGeocoder {
    pub fn new(inner: Arc<dyn Geocoder>) -> Self {
        Self { inner, names: RwLock::new(HashMap::new()) }
    }

    /// Loads a cache file written by [`save`](Self::save). A missing or
    /// unreadable file, or one from another gazetteer snapshot, starts empty.
    pub fn load(path: &Path, inner: Arc<dyn Geocoder>) -> Self {
        let cached = std::fs::read(path)
            .ok()
            .and_then(|b| serde_json::from_slice::<CacheFile>(&b).ok())
            .filter(|f| f.snapshot == inner.snapshot_id())
            .map(|f| f.names)
            .unwrap_or_default();
        Self { inner, names: RwLock::new(cached) }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = CacheFile {
            snapshot: self.inner.snapshot_id().to_owned(),
            names: self.names.read().unwrap_or_else(|e| e.into_inner()).clone(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)
    }

    pub fn len(&self) -> usize {
        self.names.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Geocoder for CachedGeocoder {
    fn snapshot_id(&self) -> &str {
        self.inner.snapshot_id()
    }

    fn geocode_name(&self, name: &str) -> Option<GeocodeMatch> {
        let k = key(name);
        if let Some(hit) = self.names.read().unwrap_or_else(|e| e.into_inner()).get(&k) {
            return hit.clone();
        }
        let result = self.inner.geocode_name(name);
        self.names.write().unwrap_or_else(|e| e.into_inner()).insert(k, result.clone());
        result
    }

    fn hierarchy_for(&self, coordinates: Coordinates, level: MatchLevel, truncate: bool) -> Vec<ChainLink> {
        self.inner.hierarchy_for(coordinates, level, truncate)
    }

    fn is_region_name(&self, name: &str) -> bool {
        self.inner.is_region_name(name)
    }
}
