mod common;

use std::time::Duration;

use confluence::harvest::{harvest, HarvestError, OaiClient, OaiOptions, RawRecord};
use confluence::mock::MockOai;
use confluence::xml::{parse_xml, write_xml};
use confluence_core::profile::{HarvestKind, HarvestSpec};
use confluence_core::MetadataTree;
use proptest::prelude::*;

fn fast() -> OaiOptions {
    OaiOptions { backoff: Duration::from_millis(5), timeout: Duration::from_secs(5), ..OaiOptions::default() }
}

fn oai_spec(url: &str) -> HarvestSpec {
    HarvestSpec {
        kind: HarvestKind::Oai,
        endpoint: url.to_owned(),
        metadata_prefix: "oai_dc".into(),
        sets: None,
        request_delay: 0,
        record_element: None,
        id_path: None,
    }
}

fn file_spec(pattern: &str, record_element: Option<&str>) -> HarvestSpec {
    HarvestSpec {
        kind: HarvestKind::File,
        endpoint: common::fixtures().join(pattern).to_string_lossy().into_owned(),
        record_element: record_element.map(str::to_owned),
        id_path: Some("identifier".into()),
        ..oai_spec("")
    }
}

fn collect(spec: &HarvestSpec) -> Vec<Result<RawRecord, HarvestError>> {
    harvest(spec, fast()).unwrap().collect()
}

#[test]
fn pages_through_resumption_tokens() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    let records: Vec<RawRecord> = collect(&oai_spec(&mock.url())).into_iter().map(Result::unwrap).collect();
    assert_eq!(records.len(), 250);
    assert_eq!(mock.requests(), 3);
    assert_eq!(records[0].local_id, "oai:demo.example.org:item0000");
    assert_eq!(records[249].local_id, "oai:demo.example.org:item0249");
    assert_eq!(records[3].datestamp.as_deref(), Some("2024-01-04"));
}

#[test]
fn retries_service_unavailable() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    mock.fail_next(2);
    let records = collect(&oai_spec(&mock.url()));
    assert_eq!(records.len(), 250);
    assert!(records.iter().all(Result::is_ok));
    assert_eq!(mock.requests(), 5);
}

#[test]
fn gives_up_after_the_last_attempt() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    mock.fail_after(Some(1));
    let records = collect(&oai_spec(&mock.url()));
    assert_eq!(records.iter().filter(|r| r.is_ok()).count(), 100);
    match records.last().unwrap() {
        Err(HarvestError::Http { status: 503, .. }) => {}
        other => panic!("expected a 503 error, got {other:?}"),
    }
}

#[test]
fn filters_by_set() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    let spec = HarvestSpec { sets: Some(vec!["photos".into()]), ..oai_spec(&mock.url()) };
    let records: Vec<RawRecord> = collect(&spec).into_iter().map(Result::unwrap).collect();
    assert_eq!(records.len(), 125);
    assert!(records.iter().all(|r| r.local_id.trim_start_matches("oai:demo.example.org:item").parse::<u32>().unwrap() % 2 == 0));
}

#[test]
fn flags_deleted_records() {
    let mut corpus = common::corpus();
    corpus[7].deleted = true;
    let mock = MockOai::start(corpus, 100, 0).unwrap();
    let records: Vec<RawRecord> = collect(&oai_spec(&mock.url())).into_iter().map(Result::unwrap).collect();
    let deleted: Vec<_> = records.iter().filter(|r| r.deleted).map(|r| r.local_id.as_str()).collect();
    assert_eq!(deleted, ["oai:demo.example.org:item0007"]);
}

#[test]
fn empty_set_is_not_an_error() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    let spec = HarvestSpec { sets: Some(vec!["maps".into()]), ..oai_spec(&mock.url()) };
    assert!(collect(&spec).is_empty());
}

#[test]
fn oai_errors_surface() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    let mut client = OaiClient::new(&mock.url(), fast());
    let body = client.request(&[("verb", "ListRecords"), ("resumptionToken", "junk")]).unwrap();
    assert!(String::from_utf8(body).unwrap().contains("badResumptionToken"));
    let err = OaiClient::new(&format!("{}x", mock.url()), fast()).identify().unwrap_err();
    assert!(matches!(err, HarvestError::Http { status: 404, .. }), "{err}");
}

#[test]
fn identify_and_list_identifiers() {
    let mock = MockOai::start(common::corpus(), 100, 0).unwrap();
    let mut client = OaiClient::new(&mock.url(), fast());
    assert_eq!(client.identify().unwrap().local_name(), "Identify");
    let ids = client.list_identifiers("oai_dc", Some("documents")).unwrap();
    assert_eq!(ids.len(), 125);
    assert_eq!(ids[0], ("oai:demo.example.org:item0001".to_owned(), false));
}

#[test]
fn one_record_per_file() {
    let records: Vec<RawRecord> = collect(&file_spec("files/single/*.xml", None)).into_iter().map(Result::unwrap).collect();
    let ids: Vec<_> = records.iter().map(|r| r.local_id.as_str()).collect();
    assert_eq!(ids, (0..10).map(|i| format!("file{i:03}")).collect::<Vec<_>>());
    assert_eq!(records[0].tree.local_name(), "dc");
}

#[test]
fn container_files_lose_only_the_unidentified_record() {
    let results = collect(&file_spec("files/container/*.xml", Some("batch")));
    assert_eq!(results.len(), 5);
    let ok: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.local_id.as_str()).collect();
    assert_eq!(ok, ["file100", "file101", "file103", "file104"]);
    let err = results.iter().find_map(|r| r.as_ref().err()).unwrap();
    assert!(err.is_record_level());
    assert!(matches!(err, HarvestError::MissingId { index: 2, .. }), "{err}");
}

#[test]
fn bad_glob_is_an_error() {
    let spec = file_spec("files/[", None);
    assert!(matches!(harvest(&spec, fast()), Err(HarvestError::Pattern(_))));
}

fn tree() -> impl Strategy<Value = MetadataTree> {
    let name = prop::sample::select(vec!["dc:title", "dc:subject", "record", "mods:name", "x"]);
    let text = prop::option::of("[ -~\u{e9}\u{2014}<>&\"']{1,12}".prop_filter("not blank", |s| !s.trim().is_empty()));
    let leaf = (name.clone(), text, prop::option::of("[a-z]{1,6}")).prop_map(|(n, t, a)| {
        let mut m = MetadataTree::new(n);
        m.text = t;
        if let Some(a) = a {
            m = m.with_attr("type", a);
        }
        m
    });
    leaf.prop_recursive(3, 24, 4, move |inner| {
        (name.clone(), prop::collection::vec(inner, 1..4)).prop_map(|(n, children)| MetadataTree { children, ..MetadataTree::new(n) })
    })
}

proptest! {
    #[test]
    fn xml_round_trip(t in tree()) {
        let root = MetadataTree::new("oai_dc:dc").with_child(t);
        prop_assert_eq!(parse_xml(write_xml(&root).as_bytes()).unwrap(), root);
    }
}
