//! Order-preserving generic representation of a harvested record.
//!
//! A [`MetadataTree`] is what a source record looks like after it has been
//! deserialized from its native format but before any mapping: element
//! names, attributes, child order and repeated siblings are all kept exactly
//! as they appeared. The JSON form of the tree is the fetch staging format.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// One attribute of an element, in document order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub value: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataTree {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<Attribute>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<MetadataTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl MetadataTree {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    /// A leaf element carrying `text`.
    pub fn leaf(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self { name: name.into(), text: Some(text.into()), ..Self::default() }
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push(Attribute { name: name.into(), value: value.into() });
        self
    }

    pub fn with_child(mut self, child: MetadataTree) -> Self {
        self.children.push(child);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.name.is_empty() && self.children.is_empty() && self.text.is_none()
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|a| a.name == name || local_name(&a.name) == name)
            .map(|a| a.value.as_str())
    }

    /// The part of the element name after its namespace prefix.
    pub fn local_name(&self) -> &str {
        local_name(&self.name)
    }

    /// Elements reached by `path`, in document order.
    pub fn select(&self, path: &TreePath) -> Vec<&MetadataTree> {
        let mut current = alloc::vec![self];
        for step in &path.steps {
            let mut next = Vec::new();
            for node in current {
                next.extend(node.children.iter().filter(|c| step.matches(c)));
            }
            current = next;
        }
        current
    }

    /// Text values reached by `path`: element text, or the attribute value
    /// when the path ends in `@name`. Elements without text are skipped.
    pub fn values(&self, path: &TreePath) -> Vec<&str> {
        let nodes = self.select(path);
        match &path.attribute {
            Some(attr) => nodes.into_iter().filter_map(|n| n.attr(attr)).collect(),
            None => nodes.into_iter().filter_map(|n| n.text.as_deref()).collect(),
        }
    }

    /// First value reached by `path`, if any.
    pub fn first_value(&self, path: &TreePath) -> Option<&str> {
        self.values(path).into_iter().next()
    }
}

pub fn local_name(name: &str) -> &str {
    name.rsplit_once(':').map_or(name, |(_, local)| local)
}

/// A slash-delimited element path relative to a tree's root, e.g.
/// `header/identifier`, `metadata/dc/subject`, `location/url[@access=preview]`
/// or `titleInfo/@lang`.
///
/// A segment containing `:` must match the element name exactly; a segment
/// without one matches on local name, so `subject` matches `dc:subject`.
/// `*` matches any element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreePath {
    steps: Vec<PathStep>,
    attribute: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PathStep {
    name: String,
    predicate: Option<(String, String)>,
}

impl PathStep {
    fn matches(&self, node: &MetadataTree) -> bool {
        let name_ok = self.name == "*"
            || if self.name.contains(':') {
                node.name == self.name
            } else {
                node.local_name() == self.name
            };
        name_ok
            && match &self.predicate {
                Some((attr, value)) => node.attr(attr) == Some(value.as_str()),
                None => true,
            }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid tree path {path:?}: {reason}")]
pub struct PathError {
    pub path: String,
    pub reason: &'static str,
}

impl TreePath {
    pub fn parse(path: &str) -> Result<Self, PathError> {
        let err = |reason| PathError { path: path.to_owned(), reason };
        let trimmed = path.trim_matches('/');
        if trimmed.is_empty() {
            return Err(err("empty path"));
        }
        let mut steps = Vec::new();
        let mut attribute = None;
        let segments: Vec<&str> = trimmed.split('/').collect();
        for (i, segment) in segments.iter().enumerate() {
            if segment.is_empty() {
                return Err(err("empty segment"));
            }
            if let Some(attr) = segment.strip_prefix('@') {
                if i + 1 != segments.len() || attr.is_empty() {
                    return Err(err("attribute selector must be the last segment"));
                }
                attribute = Some(attr.to_owned());
                continue;
            }
            let (name, predicate) = match segment.split_once('[') {
                None => (*segment, None),
                Some((name, rest)) => {
                    let inner = rest
                        .strip_suffix(']')
                        .and_then(|p| p.strip_prefix('@'))
                        .ok_or_else(|| err("predicate must look like [@attr=value]"))?;
                    let (attr, value) =
                        inner.split_once('=').ok_or_else(|| err("predicate needs '='"))?;
                    let value = value.trim_matches(|c| c == '"' || c == '\'');
                    (name, Some((attr.to_owned(), value.to_owned())))
                }
            };
            if name.is_empty() {
                return Err(err("empty element name"));
            }
            steps.push(PathStep { name: name.to_owned(), predicate });
        }
        // `@attr` alone addresses an attribute of the root.
        Ok(Self { steps, attribute })
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            f.write_str(&step.name)?;
            if let Some((a, v)) = &step.predicate {
                write!(f, "[@{a}={v}]")?;
            }
        }
        if let Some(attr) = &self.attribute {
            if !self.steps.is_empty() {
                f.write_str("/")?;
            }
            write!(f, "@{attr}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> MetadataTree {
        MetadataTree::new("oai:record")
            .with_child(
                MetadataTree::new("oai:header")
                    .with_child(MetadataTree::leaf("oai:identifier", "oai:x:1")),
            )
            .with_child(
                MetadataTree::new("oai:metadata").with_child(
                    MetadataTree::new("oai_dc:dc")
                        .with_child(MetadataTree::leaf("dc:subject", "A"))
                        .with_child(MetadataTree::leaf("dc:title", "T"))
                        .with_child(MetadataTree::leaf("dc:subject", "B").with_attr("xml:lang", "en")),
                ),
            )
    }

    #[test]
    fn local_name_segments_match_prefixed_elements() {
        let r = record();
        let p = TreePath::parse("metadata/dc/subject").unwrap();
        assert_eq!(r.values(&p), ["A", "B"]);
        let exact = TreePath::parse("oai:metadata/oai_dc:dc/dc:subject").unwrap();
        assert_eq!(r.values(&exact), ["A", "B"]);
        let wrong_prefix = TreePath::parse("oai:metadata/oai_dc:dc/dcterms:subject").unwrap();
        assert!(r.values(&wrong_prefix).is_empty());
    }

    #[test]
    fn attribute_selectors_and_predicates() {
        let r = record();
        let p = TreePath::parse("metadata/*/subject/@lang").unwrap();
        assert_eq!(r.values(&p), ["en"]);
        let p = TreePath::parse("metadata/dc/subject[@xml:lang=en]").unwrap();
        assert_eq!(r.values(&p), ["B"]);
        assert_eq!(p.to_string(), "metadata/dc/subject[@xml:lang=en]");
    }

    #[test]
    fn rejects_malformed_paths() {
        assert!(TreePath::parse("").is_err());
        assert!(TreePath::parse("a//b").is_err());
        assert!(TreePath::parse("a/@b/c").is_err());
        assert!(TreePath::parse("a[b]").is_err());
    }
}
