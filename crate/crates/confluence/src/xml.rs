//! XML to [`MetadataTree`] and back.
//!
//! Element and attribute names are rewritten to canonical prefixes for the
//! namespaces in [`NAMESPACES`], so `<dc:title>` and `<x:title xmlns:x="…dc…">`
//! both become `dc:title`. Names in other namespaces keep their source
//! prefix. Namespace declarations themselves are not kept.
//!
//! Text of a leaf element is kept verbatim. An element with both text and
//! child elements (mixed content) gets its trimmed text segments joined with
//! single spaces.

use std::borrow::Cow;
use std::ops::Range;

use confluence_core::tree::{Attribute, MetadataTree};
use quick_xml::events::{BytesStart, Event};
use quick_xml::name::{Namespace, ResolveResult};
use quick_xml::NsReader;

/// Canonical prefix for each known namespace URI.
pub const NAMESPACES: [(&str, &str); 10] = [
    ("dc", "http://purl.org/dc/elements/1.1/"),
    ("dcterms", "http://purl.org/dc/terms/"),
    ("mods", "http://www.loc.gov/mods/v3"),
    ("oai", "http://www.openarchives.org/OAI/2.0/"),
    ("oai_dc", "http://www.openarchives.org/OAI/2.0/oai_dc/"),
    ("xsi", "http://www.w3.org/2001/XMLSchema-instance"),
    ("edm", "http://www.europeana.eu/schemas/edm/"),
    ("dpla", "http://dp.la/about/map/"),
    ("xlink", "http://www.w3.org/1999/xlink"),
    ("xml", "http://www.w3.org/XML/1998/namespace"),
];

pub fn prefix_for(uri: &[u8]) -> Option<&'static str> {
    NAMESPACES.iter().find(|(_, u)| u.as_bytes() == uri).map(|(p, _)| *p)
}

pub fn uri_for(prefix: &str) -> Option<&'static str> {
    NAMESPACES.iter().find(|(p, _)| *p == prefix).map(|(_, u)| *u)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed XML at byte {offset}: {message}")]
pub struct XmlError {
    pub offset: u64,
    pub message: String,
}

pub fn parse_xml(bytes: &[u8]) -> Result<MetadataTree, XmlError> {
    parse_with_spans(bytes, None).map(|(tree, _)| tree)
}

/// Parses `bytes` and also returns the byte ranges of every element at
/// `depth` (the root is depth 0).
pub fn parse_with_spans(bytes: &[u8], depth: Option<usize>) -> Result<(MetadataTree, Vec<Range<usize>>), XmlError> {
    let mut reader = NsReader::from_reader(bytes);
    reader.config_mut().expand_empty_elements = false;
    let mut stack: Vec<Building> = Vec::new();
    let mut root: Option<MetadataTree> = None;
    let mut spans = Vec::new();
    let mut open_at: Vec<usize> = Vec::new();
    loop {
        let before = reader.buffer_position() as usize;
        let (ns, event) = match reader.read_resolved_event() {
            Ok(ok) => ok,
            Err(e) => {
                let message = e.to_string();
                return Err(XmlError { offset: reader.error_position(), message });
            }
        };
        let err = |message: String| XmlError { offset: before as u64, message };
        match event {
            Event::Start(e) => {
                if root.is_some() {
                    return Err(err("content after the root element".into()));
                }
                let name = canonical(&ns, e.name().as_ref()).map_err(err)?;
                let node = element(&reader, name, &e).map_err(err)?;
                stack.push(Building { node, segments: Vec::new() });
                open_at.push(before);
            }
            Event::Empty(e) => {
                if root.is_some() {
                    return Err(err("content after the root element".into()));
                }
                let name = canonical(&ns, e.name().as_ref()).map_err(err)?;
                let node = element(&reader, name, &e).map_err(err)?;
                if depth == Some(stack.len()) {
                    spans.push(before..reader.buffer_position() as usize);
                }
                match stack.last_mut() {
                    Some(parent) => parent.node.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::End(_) => {
                let done = stack.pop().ok_or_else(|| err("unbalanced end tag".into()))?;
                let start = open_at.pop().unwrap_or(0);
                if depth == Some(stack.len()) {
                    spans.push(start..reader.buffer_position() as usize);
                }
                let node = done.finish();
                match stack.last_mut() {
                    Some(parent) => parent.node.children.push(node),
                    None => root = Some(node),
                }
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| err(e.to_string()))?;
                push_text(&mut stack, text, root.is_some()).map_err(err)?;
            }
            Event::CData(c) => {
                let raw = c.into_inner();
                let text = std::str::from_utf8(&raw).map_err(|e| err(e.to_string()))?.to_owned();
                push_text(&mut stack, Cow::Owned(text), root.is_some()).map_err(err)?;
            }
            Event::Eof => break,
            Event::Decl(_) | Event::PI(_) | Event::Comment(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(XmlError { offset: bytes.len() as u64, message: "unexpected end of document".into() });
    }
    let root = root.ok_or(XmlError { offset: 0, message: "document has no root element".into() })?;
    Ok((root, spans))
}

struct Building {
    node: MetadataTree,
    segments: Vec<String>,
}

impl Building {
    fn finish(mut self) -> MetadataTree {
        if self.node.children.is_empty() {
            let text: String = self.segments.concat();
            self.node.text = (!text.is_empty()).then_some(text);
        } else {
            let parts: Vec<&str> = self.segments.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
            self.node.text = (!parts.is_empty()).then(|| parts.join(" "));
        }
        self.node
    }
}

fn push_text(stack: &mut [Building], text: Cow<'_, str>, after_root: bool) -> Result<(), String> {
    match stack.last_mut() {
        Some(b) => {
            b.segments.push(text.into_owned());
            Ok(())
        }
        None if text.trim().is_empty() => Ok(()),
        None if after_root => Err("content after the root element".into()),
        None => Err("text outside the root element".into()),
    }
}

fn canonical(ns: &ResolveResult<'_>, qname: &[u8]) -> Result<String, String> {
    let qname = std::str::from_utf8(qname).map_err(|e| e.to_string())?;
    let (source_prefix, local) = match qname.split_once(':') {
        Some((p, l)) => (Some(p), l),
        None => (None, qname),
    };
    Ok(match ns {
        ResolveResult::Bound(Namespace(uri)) => match prefix_for(uri) {
            Some(p) => format!("{p}:{local}"),
            None => qname.to_owned(),
        },
        ResolveResult::Unknown(p) => {
            if source_prefix == Some("xml") {
                qname.to_owned()
            } else {
                return Err(format!("undeclared namespace prefix {:?}", String::from_utf8_lossy(p)));
            }
        }
        ResolveResult::Unbound => local.to_owned(),
    })
}

fn element(reader: &NsReader<&[u8]>, name: String, e: &BytesStart<'_>) -> Result<MetadataTree, String> {
    let mut node = MetadataTree::new(name);
    for attr in e.attributes() {
        let attr = attr.map_err(|e| e.to_string())?;
        let key = attr.key.as_ref();
        if key == b"xmlns" || key.starts_with(b"xmlns:") {
            continue;
        }
        let name = if key.contains(&b':') {
            let (resolved, _) = reader.resolve_attribute(attr.key);
            canonical(&resolved, key)?
        } else {
            String::from_utf8(key.to_vec()).map_err(|e| e.to_string())?
        };
        let value = attr.unescape_value().map_err(|e| e.to_string())?.into_owned();
        node.attributes.push(Attribute { name, value });
    }
    Ok(node)
}

/// Serializes `tree` as an XML document. Declarations for the canonical
/// prefixes the tree uses are placed on the root element.
pub fn write_xml(tree: &MetadataTree) -> String {
    let mut prefixes = std::collections::BTreeSet::new();
    collect_prefixes(tree, &mut prefixes);
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let decls: Vec<(String, String)> = prefixes
        .into_iter()
        .filter(|p| *p != "xml")
        .filter_map(|p| uri_for(p).map(|u| (format!("xmlns:{p}"), u.to_owned())))
        .collect();
    write_node(tree, &decls, &mut out);
    out
}

fn collect_prefixes<'a>(tree: &'a MetadataTree, out: &mut std::collections::BTreeSet<&'a str>) {
    if let Some((p, _)) = tree.name.split_once(':') {
        out.insert(p);
    }
    for a in &tree.attributes {
        if let Some((p, _)) = a.name.split_once(':') {
            out.insert(p);
        }
    }
    for c in &tree.children {
        collect_prefixes(c, out);
    }
}

fn write_node(tree: &MetadataTree, decls: &[(String, String)], out: &mut String) {
    out.push('<');
    out.push_str(&tree.name);
    for (k, v) in decls {
        push_attr(out, k, v);
    }
    for a in &tree.attributes {
        push_attr(out, &a.name, &a.value);
    }
    if tree.children.is_empty() && tree.text.is_none() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    if let Some(t) = &tree.text {
        out.push_str(&quick_xml::escape::escape(t.as_str()));
    }
    for c in &tree.children {
        write_node(c, &[], out);
    }
    out.push_str("</");
    out.push_str(&tree.name);
    out.push('>');
}

fn push_attr(out: &mut String, name: &str, value: &str) {
    out.push(' ');
    out.push_str(name);
    out.push_str("=\"");
    out.push_str(&quick_xml::escape::escape(value));
    out.push('"');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeats_and_order_survive() {
        let t = parse_xml(
            br#"<oai_dc:dc xmlns:oai_dc="http://www.openarchives.org/OAI/2.0/oai_dc/" xmlns:dc="http://purl.org/dc/elements/1.1/"><dc:subject>A</dc:subject><dc:subject>B</dc:subject></oai_dc:dc>"#,
        )
        .unwrap();
        let subjects: Vec<_> = t.children.iter().map(|c| (c.name.as_str(), c.text.as_deref())).collect();
        assert_eq!(subjects, [("dc:subject", Some("A")), ("dc:subject", Some("B"))]);
    }

    #[test]
    fn prefixes_are_canonicalized() {
        let t = parse_xml(br#"<r xmlns="http://www.loc.gov/mods/v3" xmlns:q="http://purl.org/dc/terms/"><titleInfo><title>T</title></titleInfo><q:date>1900</q:date></r>"#).unwrap();
        assert_eq!(t.name, "mods:r");
        assert_eq!(t.children[0].name, "mods:titleInfo");
        assert_eq!(t.children[1].name, "dcterms:date");
    }

    #[test]
    fn attributes_kept_and_xmlns_dropped() {
        let t = parse_xml(br#"<a xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" xsi:type="x" lang="en"/>"#).unwrap();
        assert_eq!(t.attributes, vec![
            Attribute { name: "xsi:type".into(), value: "x".into() },
            Attribute { name: "lang".into(), value: "en".into() },
        ]);
    }

    #[test]
    fn leaf_text_verbatim_mixed_joined() {
        let t = parse_xml(b"<a><b>  x &amp; y </b><c>one <i>two</i> three</c></a>").unwrap();
        assert_eq!(t.children[0].text.as_deref(), Some("  x & y "));
        assert_eq!(t.children[1].text.as_deref(), Some("one three"));
        assert_eq!(t.children[1].children[0].text.as_deref(), Some("two"));
        assert_eq!(t.text, None);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_xml(b"<a><b></a>").unwrap_err();
        assert!(e.offset > 0, "{e}");
        assert!(parse_xml(b"").is_err());
        assert!(parse_xml(b"<a/><b/>").is_err());
        assert!(parse_xml(b"<p:a/>").is_err());
    }

    #[test]
    fn spans_cover_elements_at_depth() {
        let doc = b"<root><r id=\"1\"><x/></r>\n<r id=\"2\"/></root>";
        let (_, spans) = parse_with_spans(doc, Some(1)).unwrap();
        let parts: Vec<&[u8]> = spans.iter().map(|s| &doc[s.clone()]).collect();
        assert_eq!(parts, [&b"<r id=\"1\"><x/></r>"[..], &b"<r id=\"2\"/>"[..]]);
    }

    #[test]
    fn write_then_parse() {
        let t = MetadataTree::new("oai:record")
            .with_child(MetadataTree::leaf("dc:title", "A < B & \"C\""))
            .with_child(MetadataTree::new("mods:url").with_attr("access", "preview"));
        assert_eq!(parse_xml(write_xml(&t).as_bytes()).unwrap(), t);
    }
}
