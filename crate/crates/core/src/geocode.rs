//! Offline gazetteer geocoding: best-guess coordinates for a place name, then
//! the containing hierarchy for those coordinates.
//!
//! The gazetteer is a CSV with columns `name, altNames, level, lat, lon,
//! parentChain`; `altNames` and `parentChain` are pipe-separated and the
//! chain runs from country downward. Every chain must resolve to entries of
//! the gazetteer itself, which is checked at load.
//!
//! Hierarchy lookup is a nearest-entry approximation, not polygon
//! containment: starting at city level it takes the nearest entry within a
//! per-level radius and returns that entry's chain. A state centroid that
//! happens to fall near a county seat therefore picks up the county, unless
//! the chain is truncated at the level the name matched.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use once_cell::race::OnceBox;

use crate::hash;
use crate::model::{Coordinates, MatchLevel};
use crate::table;

pub const GAZETTEER_CSV: &str = include_str!("../data/gazetteer.csv");

/// Search radius in kilometres for the reverse lookup, by level.
const RADIUS_KM: [(MatchLevel, f64); 4] = [
    (MatchLevel::City, 10.0),
    (MatchLevel::County, 40.0),
    (MatchLevel::State, 600.0),
    (MatchLevel::Country, 5000.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct GazetteerEntry {
    pub name: String,
    pub alt_names: Vec<String>,
    pub level: MatchLevel,
    pub coordinates: Coordinates,
    pub parent_chain: Vec<String>,
}

/// One element of a hierarchy chain.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChainLink {
    pub level: MatchLevel,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeocodeMatch {
    pub coordinates: Coordinates,
    pub level: MatchLevel,
    /// The matched entry's own chain, country first, ending with the entry.
    pub chain: Vec<ChainLink>,
}

impl GeocodeMatch {
    pub fn name(&self) -> &str {
        self.chain.last().map_or("", |l| l.name.as_str())
    }
}

/// A geocoding backend. Implementations must be deterministic for a given
/// [`snapshot_id`](Geocoder::snapshot_id).
pub trait Geocoder: Send + Sync {
    /// Identifies the backing data; caches are keyed by it.
    fn snapshot_id(&self) -> &str;

    fn geocode_name(&self, name: &str) -> Option<GeocodeMatch>;

    /// The containing chain for `coordinates`, country first. Empty when no
    /// entry lies within range. With `truncate`, links more specific than
    /// `level` are dropped.
    fn hierarchy_for(&self, coordinates: Coordinates, level: MatchLevel, truncate: bool) -> Vec<ChainLink>;

    /// True when `name` is a state or country name or alt name.
    fn is_region_name(&self, name: &str) -> bool;

    /// `geocode_name` followed by `hierarchy_for`. When the reverse lookup
    /// lands on a chain that does not contain the matched place, the
    /// matched entry's own chain is used instead.
    fn resolve(&self, name: &str, truncate: bool) -> Option<Resolution> {
        let m = self.geocode_name(name)?;
        let mut chain = self.hierarchy_for(m.coordinates, m.level, truncate);
        let matched = m.chain.last();
        if matched.is_none_or(|last| !chain.contains(last)) {
            chain = m.chain.clone();
        }
        Some(Resolution { coordinates: m.coordinates, level: m.level, chain })
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Resolution {
    pub coordinates: Coordinates,
    pub level: MatchLevel,
    pub chain: Vec<ChainLink>,
}

impl Resolution {
    pub fn at(&self, level: MatchLevel) -> Option<&str> {
        self.chain.iter().find(|l| l.level == level).map(|l| l.name.as_str())
    }

    /// Chain names joined with `" -- "`.
    pub fn display(&self) -> String {
        self.chain.iter().map(|l| l.name.as_str()).collect::<Vec<_>>().join(" -- ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gazetteer line {line}: {reason}")]
pub struct GazetteerError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    /// Case-folded name or alt name → entry indices.
    by_name: BTreeMap<String, Vec<usize>>,
    /// Per entry, the levels of its parent chain.
    chain_levels: Vec<Vec<MatchLevel>>,
    snapshot_id: String,
}

static BUNDLED: OnceBox<Gazetteer> = OnceBox::new();

fn parse_level(s: &str) -> Option<MatchLevel> {
    Some(match s {
        "country" => MatchLevel::Country,
        "state" => MatchLevel::State,
        "county" => MatchLevel::County,
        "city" => MatchLevel::City,
        _ => return None,
    })
}

fn fold(s: &str) -> String {
    crate::vocab::collapse_whitespace(&s.trim().to_lowercase())
}

fn pipe_list(s: &str) -> Vec<String> {
    s.split('|').map(str::trim).filter(|p| !p.is_empty()).map(ToOwned::to_owned).collect()
}

impl Gazetteer {
    /// The bundled sample gazetteer. Parsed once per process.
    pub fn bundled() -> &'static Gazetteer {
        BUNDLED.get_or_init(|| Box::new(Self::from_csv(GAZETTEER_CSV).expect("bundled gazetteer is well-formed")))
    }

    pub fn from_csv(text: &str) -> Result<Self, GazetteerError> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (line, row) in table::rows(text) {
            let err = |reason: &str| GazetteerError { line, reason: reason.to_owned() };
            let [name, alts, level, lat, lon, chain] = row[..] else {
                return Err(err("expected 6 columns"));
            };
            if name.is_empty() {
                return Err(err("empty name"));
            }
            let level = parse_level(level).ok_or_else(|| err("level must be country, state, county or city"))?;
            let lat: f64 = lat.parse().map_err(|_| err("bad latitude"))?;
            let lon: f64 = lon.parse().map_err(|_| err("bad longitude"))?;
            let coordinates = Coordinates::new(lat, lon).ok_or_else(|| err("coordinates out of range"))?;
            entries.push(GazetteerEntry {
                name: name.to_owned(),
                alt_names: pipe_list(alts),
                level,
                coordinates,
                parent_chain: pipe_list(chain),
            });
            lines.push(line);
        }

        // resolve every chain link to an entry whose own chain is the prefix
        let mut by_chain: BTreeMap<(Vec<String>, String), usize> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_chain.insert((e.parent_chain.clone(), e.name.clone()), i).is_some() {
                return Err(GazetteerError { line: lines[i], reason: format!("duplicate entry {}", e.name) });
            }
        }
        let mut chain_levels = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            let mut levels = Vec::with_capacity(e.parent_chain.len());
            for k in 0..e.parent_chain.len() {
                let key = (e.parent_chain[..k].to_vec(), e.parent_chain[k].clone());
                let parent = by_chain.get(&key).ok_or_else(|| GazetteerError {
                    line: lines[i],
                    reason: format!("parent {} is not in the gazetteer", e.parent_chain[k]),
                })?;
                levels.push(entries[*parent].level);
            }
            let ordered = levels.windows(2).all(|w| w[0] < w[1]) && levels.last().is_none_or(|l| *l < e.level);
            if !ordered {
                return Err(GazetteerError { line: lines[i], reason: "parent chain is not ordered country to city".into() });
            }
            chain_levels.push(levels);
        }

        let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            let mut keys: BTreeSet<String> = e.alt_names.iter().map(|a| fold(a)).collect();
            keys.insert(fold(&e.name));
            for key in keys {
                by_name.entry(key).or_default().push(i);
            }
        }

        let snapshot_id = hash::hex128(hash::hash128(text.as_bytes()))[..16].to_string();
        Ok(Self { entries, by_name, chain_levels, snapshot_id })
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    fn chain_of(&self, i: usize) -> Vec<ChainLink> {
        let e = &self.entries[i];
        let mut chain: Vec<ChainLink> = e
            .parent_chain
            .iter()
            .zip(&self.chain_levels[i])
            .map(|(name, level)| ChainLink { level: *level, name: name.clone() })
            .collect();
        chain.push(ChainLink { level: e.level, name: e.name.clone() });
        chain
    }

    /// Entry indices whose chain includes a place named `qualifier` (by name
    /// or alt name). `None` when the qualifier names nothing in the gazetteer.
    fn qualified(&self, candidates: &[usize], qualifier: &str) -> Option<Vec<usize>> {
        let aliases = self.by_name.get(&fold(qualifier))?;
        let names: BTreeSet<&str> = aliases.iter().map(|i| self.entries[*i].name.as_str()).collect();
        Some(
            candidates
                .iter()
                .copied()
                .filter(|i| self.entries[*i].parent_chain.iter().any(|p| names.contains(p.as_str())))
                .collect(),
        )
    }

    fn best(&self, mut candidates: Vec<usize>) -> Option<usize> {
        candidates.sort_by(|a, b| {
            let (ea, eb) = (&self.entries[*a], &self.entries[*b]);
            eb.level.cmp(&ea.level).then_with(|| ea.parent_chain.cmp(&eb.parent_chain))
        });
        candidates.first().copied()
    }

    fn lookup(&self, base: &str, qualifiers: &[&str]) -> Option<usize> {
        let mut candidates = self.by_name.get(&fold(base))?.clone();
        for q in qualifiers {
            if let Some(narrowed) = self.qualified(&candidates, q) {
                candidates = narrowed;
            }
        }
        self.best(candidates)
    }
}

/// Splits `"Charlotte (NC)"` into `("Charlotte", ["NC"])`. Text after the
/// last closing parenthesis is appended to the base.
fn split_parentheticals(name: &str) -> (String, Vec<&str>) {
    let mut base = String::new();
    let mut qualifiers = Vec::new();
    let mut rest = name;
    while let Some(open) = rest.find('(') {
        let Some(close) = rest[open..].find(')') else { break };
        base.push_str(&rest[..open]);
        let q = rest[open + 1..open + close].trim();
        if !q.is_empty() {
            qualifiers.push(q);
        }
        rest = &rest[open + close + 1..];
    }
    base.push_str(rest);
    (crate::vocab::collapse_whitespace(base.trim()), qualifiers)
}

fn haversine_km(a: Coordinates, b: Coordinates) -> f64 {
    const R: f64 = 6371.0088;
    let (lat1, lat2) = (a.lat().to_radians(), b.lat().to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon() - a.lon()).to_radians();
    let h = libm::pow(libm::sin(dlat / 2.0), 2.0)
        + libm::cos(lat1) * libm::cos(lat2) * libm::pow(libm::sin(dlon / 2.0), 2.0);
    2.0 * R * libm::asin(libm::sqrt(h.min(1.0)))
}

impl Geocoder for Gazetteer {
    fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    /// Exact name or alt-name match after case folding. Parenthetical
    /// qualifiers, and failing a direct match a comma-separated tail, narrow
    /// the candidates to those whose chain contains the qualifier. Remaining
    /// ties go to the most specific level, then the alphabetically first
    /// parent chain.
    fn geocode_name(&self, name: &str) -> Option<GeocodeMatch> {
        let (base, qualifiers) = split_parentheticals(name);
        if base.is_empty() {
            return None;
        }
        let found = self.lookup(&base, &qualifiers).or_else(|| {
            let (head, tail) = base.rsplit_once(',')?;
            let mut qs = qualifiers.clone();
            qs.push(tail.trim());
            let i = self.lookup(head.trim(), &qs)?;
            // the tail must actually have narrowed to a containing place
            let tail_ok = self
                .by_name
                .get(&fold(tail))
                .is_some_and(|ids| ids.iter().any(|t| self.entries[i].parent_chain.contains(&self.entries[*t].name)));
            tail_ok.then_some(i)
        })?;
        let e = &self.entries[found];
        Some(GeocodeMatch { coordinates: e.coordinates, level: e.level, chain: self.chain_of(found) })
    }

    fn hierarchy_for(&self, coordinates: Coordinates, level: MatchLevel, truncate: bool) -> Vec<ChainLink> {
        let mut chain = Vec::new();
        for (lvl, radius) in RADIUS_KM {
            let nearest = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.level == lvl)
                .map(|(i, e)| (haversine_km(coordinates, e.coordinates), i))
                .filter(|(d, _)| *d <= radius)
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| self.entries[a.1].name.cmp(&self.entries[b.1].name)));
            if let Some((_, i)) = nearest {
                chain = self.chain_of(i);
                break;
            }
        }
        if truncate && level != MatchLevel::Unmatched {
            chain.retain(|l| l.level <= level);
        }
        chain
    }

    fn is_region_name(&self, name: &str) -> bool {
        self.by_name.get(&fold(name)).is_some_and(|ids| {
            ids.iter().any(|i| matches!(self.entries[*i].level, MatchLevel::State | MatchLevel::Country))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(chain: &[ChainLink]) -> Vec<&str> {
        chain.iter().map(|l| l.name.as_str()).collect()
    }

    #[test]
    fn bundled_loads_and_chains_resolve() {
        let g = Gazetteer::bundled();
        assert!(g.entries().len() >= 200);
        assert_eq!(g.snapshot_id().len(), 16);
    }

    #[test]
    fn qualifier_picks_the_right_charlotte() {
        let g = Gazetteer::bundled();
        let m = g.geocode_name("Charlotte (NC)").unwrap();
        assert_eq!(m.coordinates.to_string(), "35.226944, -80.843333");
        assert_eq!(m.level, MatchLevel::City);
        let mi = g.geocode_name("Charlotte (MI)").unwrap();
        assert_eq!(names(&mi.chain), ["United States", "Michigan", "Eaton County", "Charlotte"]);
        // unqualified: alphabetical parent chain ("Michigan" < "North Carolina")
        assert_eq!(g.geocode_name("charlotte").unwrap().chain, mi.chain);
        let comma = g.geocode_name("Charlotte, North Carolina").unwrap();
        assert_eq!(comma.coordinates, m.coordinates);
    }

    #[test]
    fn hierarchy_truncation() {
        let g = Gazetteer::bundled();
        let wi = g.geocode_name("Wisconsin").unwrap();
        assert_eq!(wi.level, MatchLevel::State);
        let full = g.hierarchy_for(wi.coordinates, wi.level, false);
        assert_eq!(names(&full), ["United States", "Wisconsin", "Portage County"]);
        let cut = g.hierarchy_for(wi.coordinates, wi.level, true);
        assert_eq!(names(&cut), ["United States", "Wisconsin"]);
    }

    #[test]
    fn misses_and_bad_tables() {
        let g = Gazetteer::bundled();
        assert!(g.geocode_name("Xyzzyville").is_none());
        assert!(g.geocode_name("  ").is_none());
        assert!(g.geocode_name("Boston, Xyzzy").is_none());
        let orphan = "name,altNames,level,lat,lon,parentChain\nTown,,city,1,1,Nowhere\n";
        assert!(Gazetteer::from_csv(orphan).is_err());
        let unordered = "name,altNames,level,lat,lon,parentChain\nC,,country,0,0,\nT,,city,1,1,C\nS,,state,1,1,C|T\n";
        assert!(Gazetteer::from_csv(unordered).is_err());
    }

    #[test]
    fn haversine_sanity() {
        // one degree of latitude is about 111.2 km
        let a = Coordinates::new(0.0, 0.0).unwrap();
        let b = Coordinates::new(1.0, 0.0).unwrap();
        assert!((haversine_km(a, b) - 111.195).abs() < 0.01);
    }

    #[test]
    fn region_names() {
        let g = Gazetteer::bundled();
        assert!(g.is_region_name("Texas"));
        assert!(g.is_region_name("TX"));
        assert!(g.is_region_name("USA"));
        assert!(!g.is_region_name("Denton"));
    }
}
