//! Bundled controlled vocabularies: ISO 639-3 languages (with the ISO 639-1
//! crosswalk), the DCMI Type Vocabulary plus a synonym table, and English
//! month names for the date grammar.
//!
//! The tables ship as CSV under `data/` and are compiled in. The DCMI synonym
//! table can be replaced at runtime with [`Vocabularies::with_dcmi_synonyms`].

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;

use once_cell::race::OnceBox;

use crate::table;

pub const ISO_639_3_CSV: &str = include_str!("../data/iso639-3.csv");
pub const ISO_639_1_CSV: &str = include_str!("../data/iso639-1.csv");
pub const DCMI_TYPES_CSV: &str = include_str!("../data/dcmi-types.csv");
pub const DCMI_SYNONYMS_CSV: &str = include_str!("../data/dcmi-synonyms.csv");
pub const MONTHS_CSV: &str = include_str!("../data/months.csv");

/// The twelve DCMI Type Vocabulary terms, canonical capitalization.
pub const DCMI_TERMS: [&str; 12] = [
    "Collection",
    "Dataset",
    "Event",
    "Image",
    "InteractiveResource",
    "MovingImage",
    "PhysicalObject",
    "Service",
    "Software",
    "Sound",
    "StillImage",
    "Text",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("vocabulary table line {line}: {reason}")]
pub struct TableError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Vocabularies {
    language_names: BTreeMap<String, String>,
    language_by_name: BTreeMap<String, String>,
    alpha2: BTreeMap<String, String>,
    dcmi_synonyms: BTreeMap<String, &'static str>,
    months: BTreeMap<String, u8>,
}

static BUNDLED: OnceBox<Vocabularies> = OnceBox::new();

impl Vocabularies {
    /// The compiled-in tables. Parsed once per process.
    pub fn bundled() -> &'static Vocabularies {
        BUNDLED.get_or_init(|| {
            Box::new(
                Self::from_tables(ISO_639_3_CSV, ISO_639_1_CSV, DCMI_SYNONYMS_CSV, MONTHS_CSV)
                    .expect("bundled vocabulary tables are well-formed"),
            )
        })
    }

    pub fn from_tables(
        iso639_3: &str,
        iso639_1: &str,
        dcmi_synonyms: &str,
        months: &str,
    ) -> Result<Self, TableError> {
        let mut language_names = BTreeMap::new();
        let mut language_by_name = BTreeMap::new();
        for (line, row) in table::rows(iso639_3) {
            let [code, name] = two(&row, line)?;
            language_names.insert(code.to_ascii_lowercase(), name.to_owned());
            language_by_name.insert(name.to_lowercase(), code.to_ascii_lowercase());
        }
        let mut alpha2 = BTreeMap::new();
        for (line, row) in table::rows(iso639_1) {
            let [a2, code] = two(&row, line)?;
            if !language_names.contains_key(code) {
                return Err(TableError { line, reason: alloc::format!("unknown ISO 639-3 code {code}") });
            }
            alpha2.insert(a2.to_ascii_lowercase(), code.to_owned());
        }
        let mut month_map = BTreeMap::new();
        for (line, row) in table::rows(months) {
            let [name, number] = two(&row, line)?;
            let n: u8 = number
                .parse()
                .ok()
                .filter(|n| (1..=12).contains(n))
                .ok_or_else(|| TableError { line, reason: "month must be 1-12".into() })?;
            month_map.insert(name.to_lowercase(), n);
        }
        let mut vocab = Self {
            language_names,
            language_by_name,
            alpha2,
            dcmi_synonyms: BTreeMap::new(),
            months: month_map,
        };
        vocab.dcmi_synonyms = parse_synonyms(dcmi_synonyms)?;
        Ok(vocab)
    }

    /// Replaces the DCMI synonym table (CSV with header `synonym,term`).
    pub fn with_dcmi_synonyms(mut self, csv: &str) -> Result<Self, TableError> {
        self.dcmi_synonyms = parse_synonyms(csv)?;
        Ok(self)
    }

    pub fn is_iso639_3(&self, code: &str) -> bool {
        self.language_names.contains_key(code)
    }

    pub fn language_name(&self, code: &str) -> Option<&str> {
        self.language_names.get(code).map(String::as_str)
    }

    /// Matches a free-text language value against ISO 639-3 codes, ISO 639-1
    /// codes and English names, case-insensitively. Returns `(code, name)`.
    pub fn match_language(&self, value: &str) -> Option<(&str, &str)> {
        let key = value.trim().to_lowercase();
        if key.is_empty() {
            return None;
        }
        let code = if self.language_names.contains_key(&key) {
            Some(key.as_str())
        } else if let Some(code) = self.alpha2.get(&key) {
            Some(code.as_str())
        } else {
            self.language_by_name.get(&key).map(String::as_str)
        }?;
        let (code, name) = self.language_names.get_key_value(code)?;
        Some((code.as_str(), name.as_str()))
    }

    /// Reconciles a type value against the DCMI terms and the synonym table.
    ///
    /// Matching is case-insensitive, ignores internal whitespace for the
    /// terms themselves ("Moving Image" is `MovingImage`) and retries with
    /// one trailing `s` removed ("images" is `Image`).
    pub fn match_dcmi_type(&self, value: &str) -> Option<&'static str> {
        let normalized = collapse_whitespace(&value.trim().to_lowercase());
        if normalized.is_empty() {
            return None;
        }
        let mut candidates = alloc::vec![normalized.clone()];
        if let Some(singular) = singularize(&normalized) {
            candidates.push(singular);
        }
        for candidate in &candidates {
            let squashed: String = candidate.chars().filter(|c| !c.is_whitespace()).collect();
            if let Some(term) = DCMI_TERMS.iter().find(|t| t.to_lowercase() == squashed) {
                return Some(term);
            }
            if let Some(term) = self.dcmi_synonyms.get(candidate.as_str()) {
                return Some(term);
            }
        }
        None
    }

    pub fn is_dcmi_term(value: &str) -> bool {
        DCMI_TERMS.contains(&value)
    }

    /// Month number for an English month name or abbreviation
    /// (case-insensitive, trailing period ignored).
    pub fn month(&self, name: &str) -> Option<u8> {
        let key = name.trim().trim_end_matches('.').to_lowercase();
        self.months.get(&key).copied()
    }
}

fn two<'a>(row: &[&'a str], line: usize) -> Result<[&'a str; 2], TableError> {
    match row {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok([a, b]),
        _ => Err(TableError { line, reason: "expected two non-empty columns".into() }),
    }
}

fn parse_synonyms(csv: &str) -> Result<BTreeMap<String, &'static str>, TableError> {
    let mut out = BTreeMap::new();
    for (line, row) in table::rows(csv) {
        let [synonym, term] = two(&row, line)?;
        let canonical = DCMI_TERMS
            .iter()
            .find(|t| **t == term)
            .ok_or_else(|| TableError { line, reason: alloc::format!("{term} is not a DCMI type term") })?;
        out.insert(collapse_whitespace(&synonym.to_lowercase()), *canonical);
    }
    Ok(out)
}

fn singularize(word: &str) -> Option<String> {
    let stem = word.strip_suffix('s')?;
    if stem.len() < 3 || stem.ends_with('s') {
        return None;
    }
    Some(stem.to_owned())
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for (i, part) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(part);
    }
    out
}

impl Vocabularies {
    /// All ISO 639-3 codes, sorted.
    pub fn language_codes(&self) -> impl Iterator<Item = &str> {
        self.language_names.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_matching_routes() {
        let v = Vocabularies::bundled();
        assert_eq!(v.match_language("en"), Some(("eng", "English")));
        assert_eq!(v.match_language("English"), Some(("eng", "English")));
        assert_eq!(v.match_language(" ENG "), Some(("eng", "English")));
        assert_eq!(v.match_language("spa"), Some(("spa", "Spanish")));
        assert_eq!(v.match_language("Esperanto-ish"), None);
        assert!(!v.is_iso639_3("zzz9"));
        assert!(v.language_codes().count() > 7000);
    }

    #[test]
    fn dcmi_matching() {
        let v = Vocabularies::bundled();
        assert_eq!(v.match_dcmi_type("images"), Some("Image"));
        assert_eq!(v.match_dcmi_type("Moving Image"), Some("MovingImage"));
        assert_eq!(v.match_dcmi_type("still  image"), Some("StillImage"));
        assert_eq!(v.match_dcmi_type("Photographs"), Some("Image"));
        assert_eq!(v.match_dcmi_type("Dataset"), Some("Dataset"));
        assert_eq!(v.match_dcmi_type("postcard"), None);
        // "class" must not singularize to "clas"
        assert_eq!(singularize("class"), None);
    }

    #[test]
    fn every_synonym_targets_a_term() {
        let parsed = parse_synonyms(DCMI_SYNONYMS_CSV).unwrap();
        assert!(parsed.len() >= 40);
        assert!(parse_synonyms("synonym,term\nfoo,Picture\n").is_err());
    }

    #[test]
    fn months() {
        let v = Vocabularies::bundled();
        assert_eq!(v.month("March"), Some(3));
        assert_eq!(v.month("Sept."), Some(9));
        assert_eq!(v.month("Smarch"), None);
    }
}
