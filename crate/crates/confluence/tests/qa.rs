mod common;

use confluence::qa::{self, Report, ReportKind, ReportStage};
use confluence_core::hash::mint_record_id;

fn enriched_run(env: &common::Env) -> String {
    let run = env.engine.create_run("demo").unwrap();
    env.engine.run_all(&run.run_id).unwrap().run_id
}

#[test]
fn subject_values_after_shredding() {
    let (env, _mock) = common::demo();
    let run = enriched_run(&env);
    let rows = qa::field_values(&env.engine, &run, "sourceResource/subject", ReportStage::Enriched).unwrap();
    assert_eq!(rows.len(), 600);
    assert!(rows.iter().all(|r| !r.value.contains(';') && r.value == r.value.trim()));
    assert!(rows.windows(2).all(|w| (&w[0].value, &w[0].record_id) <= (&w[1].value, &w[1].record_id)));
}

#[test]
fn raw_values_use_tree_paths() {
    let (env, _mock) = common::demo();
    let run = enriched_run(&env);
    let rows = qa::field_values(&env.engine, &run, "metadata/dc/subject", ReportStage::Raw).unwrap();
    // Every fourth record carries two subjects in one element.
    assert_eq!(rows.len(), 600 - 63);
    let id = mint_record_id("demo", "oai:demo.example.org:item0000");
    assert!(rows.iter().any(|r| r.value == "Railroads; Churches" && r.record_id == id));
    let counts = qa::field_counts(&env.engine, &run, "header/setSpec", ReportStage::Raw).unwrap();
    assert_eq!(counts.iter().map(|c| (c.value.as_str(), c.count)).collect::<Vec<_>>(), [("documents", 125), ("photos", 125)]);
}

#[test]
fn counts_sort_by_frequency() {
    let (env, _mock) = common::demo();
    let run = enriched_run(&env);
    let rows = qa::field_counts(&env.engine, &run, "sourceResource/language/label", ReportStage::Enriched).unwrap();
    let rows: Vec<_> = rows.iter().map(|r| (r.value.as_str(), r.count)).collect();
    assert_eq!(rows, [("English", 126), ("Spanish", 83), ("French", 41)]);
}

#[test]
fn stage_diff_names_the_step() {
    let (env, _mock) = common::demo();
    let run = enriched_run(&env);
    let id = mint_record_id("demo", "oai:demo.example.org:item0001");
    let rows: Vec<_> =
        qa::stage_diff(&env.engine, &run, "sourceResource/date").unwrap().into_iter().filter(|r| r.record_id == id).collect();
    let cells: Vec<_> = rows.iter().map(|r| (r.field_path.as_str(), r.raw_value.as_str(), r.enriched_value.as_str(), r.step_name.as_str())).collect();
    assert_eq!(
        cells,
        [
            ("sourceResource/date/0/begin", "", "1901-04-12", "normalize_date"),
            ("sourceResource/date/0/end", "", "1901-04-12", "normalize_date"),
        ]
    );
    for field in ["sourceResource/title", "sourceResource/spatial", "aggregation/preview"] {
        let rows = qa::stage_diff(&env.engine, &run, field).unwrap();
        assert!(!rows.is_empty(), "{field}");
        assert!(rows.iter().all(|r| r.step_name != "map" && r.field_path.starts_with(field)), "{field}");
    }
}

#[test]
fn validation_summary_groups_by_rule() {
    let (env, mock) = common::demo();
    let mut records = common::corpus();
    for r in records.iter_mut().take(3) {
        r.metadata.children.retain(|c| c.local_name() != "rights");
    }
    mock.set_records(records);
    let run = enriched_run(&env);
    let doc = env.engine.run(&run).unwrap();
    assert_eq!((doc.counts.added, doc.counts.excluded), (247, 3));
    let rows = qa::validation_summary(&env.engine, &run).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].rule.as_str(), rows[0].field_path.as_str(), rows[0].count), ("missing-required", "sourceResource/rights", 3));
    let mut ids: Vec<_> = (0..3).map(|i| mint_record_id("demo", &format!("oai:demo.example.org:item{i:04}"))).collect();
    ids.sort();
    assert_eq!(rows[0].sample_ids, ids);
}

#[test]
fn reports_are_written_as_csv_and_json() {
    let (env, _mock) = common::demo();
    let run = enriched_run(&env);
    let field = Some("sourceResource/subject");
    let report = qa::generate(&env.engine, &run, ReportKind::Counts, field, ReportStage::Enriched).unwrap();
    let path = qa::write_report(&env.engine, &run, ReportKind::Counts, field, ReportStage::Enriched, &report).unwrap();
    assert_eq!(path.file_name().unwrap(), "counts-enriched-sourceResource.subject.csv");
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("value,count\r\n"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(path.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), report.len());
    assert!(matches!(report, Report::Counts(_)));

    let err = qa::generate(&env.engine, &run, ReportKind::Values, None, ReportStage::Enriched).unwrap_err();
    assert_eq!(err.kind(), "bad-request");
}

#[test]
fn reports_wait_for_their_task() {
    let (env, _mock) = common::demo();
    let run = env.engine.create_run("demo").unwrap();
    let err = qa::field_counts(&env.engine, &run.run_id, "sourceResource/title", ReportStage::Enriched).unwrap_err();
    assert_eq!(err.kind(), "conflict");
}
