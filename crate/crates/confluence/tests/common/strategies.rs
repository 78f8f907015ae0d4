//! Random envelopes for property tests.

use confluence_core::model::{
    Aggregation, CollectionRef, Coordinates, DcmiType, LanguageTerm, MapRecord, Place, SourceResource, TemporalSpan,
};
use confluence_core::pipeline::{Envelope, RawContent};
use confluence_core::MetadataTree;
use proptest::prelude::*;

const TEXTS: &[&str] = &[
    "Railroads",
    "Cotton; Mills",
    "  Bridges  ",
    "Farms ;",
    "U.S.",
    "Boston, 1850",
    "Photographs,",
    "A / B /",
    "",
    "Agriculture -- Texas",
];
const DATES: &[&str] = &[
    "1850", "1901-04-12", "1920s", "circa 1875", "1861-1865", "March 1899", "May 4, 1912", "1930-01-01/1930-06-30",
    "ca. 1900", "1948-07", "sometime", "1865-1861", "19th century", "", "2001-13-01",
];
const PLACES: &[&str] = &[
    "Charlotte (NC)",
    "Wisconsin",
    "Chicago (IL)",
    "Atlanta, Georgia",
    "Boston",
    "Springfield",
    "Nowhere Special",
    "Texas",
    "Portland (ME)",
    "",
];
const LANGS: &[&str] = &["English", "eng", "en", "Spanish", "fre", "Klingon", "", "ENGLISH"];
const TYPES: &[&str] = &["Image", "photograph", "text", "map", "Widget", "moving image", ""];

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => prop::sample::select(TEXTS).prop_map(str::to_owned),
        2 => "[A-Za-z ;,:/.]{0,16}",
        1 => "\\PC{0,10}",
    ]
}

fn texts(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(text(), 0..=max)
}

fn pool(values: &'static [&'static str]) -> impl Strategy<Value = String> {
    prop_oneof![4 => prop::sample::select(values).prop_map(str::to_owned), 1 => text()]
}

fn span() -> impl Strategy<Value = TemporalSpan> {
    (pool(DATES), any::<bool>()).prop_map(|(d, parsed)| {
        let mut s = TemporalSpan::unparsed(d);
        if parsed {
            s.begin = Some("1900".into());
            s.end = Some("1901".into());
        }
        s
    })
}

fn place() -> impl Strategy<Value = Place> {
    (pool(PLACES), any::<bool>(), any::<bool>()).prop_map(|(name, located, labelled)| {
        let mut p = Place::named(name);
        if !labelled {
            p.pref_label.clear();
        }
        if located {
            p.coordinates = Coordinates::new(40.0, -90.0);
            p.state = Some("Somewhere".into());
        }
        p
    })
}

fn source_resource() -> impl Strategy<Value = SourceResource> {
    (
        (texts(2), texts(2), texts(2), texts(3), texts(2), texts(2)),
        prop::collection::vec(span(), 0..3),
        prop::collection::vec(place(), 0..3),
        prop::collection::vec(pool(LANGS), 0..3),
        prop::collection::vec(pool(TYPES), 0..3),
        (texts(2), prop::collection::vec(pool(PLACES), 0..2), prop::collection::vec(pool(DATES), 0..2)),
    )
        .prop_map(|((title, rights, creator, subject, description, identifier), date, spatial, language, types, extra)| {
            let (has_type, cov_places, cov_dates) = extra;
            SourceResource {
                title,
                rights,
                creator,
                subject,
                description,
                identifier,
                date,
                spatial,
                language: language.into_iter().map(|label| LanguageTerm { code: String::new(), label }).collect(),
                dcmi_type: types.into_iter().map(DcmiType).collect(),
                collection: vec![CollectionRef { id: String::new(), title: "Demo".into() }],
                has_type,
                coverage: cov_places.into_iter().chain(cov_dates).collect(),
                ..SourceResource::default()
            }
        })
}

fn aggregation() -> impl Strategy<Value = Aggregation> {
    (text(), prop::option::of(Just("https://demo.example.org/thumb/1.jpg".to_owned())), any::<bool>()).prop_map(
        |(dp, preview, shown)| Aggregation {
            data_provider: dp,
            provider: "Demo Hub".into(),
            intermediate_provider: None,
            is_shown_at: if shown { "https://demo.example.org/item/1".into() } else { String::new() },
            preview: preview.unwrap_or_default(),
            rights_uri: None,
            original_record: String::new(),
        },
    )
}

pub fn map_record() -> impl Strategy<Value = MapRecord> {
    ("[0-9a-f]{32}", "[a-z0-9:.]{1,24}", source_resource(), aggregation()).prop_map(|(id, local_id, sr, agg)| MapRecord {
        id,
        local_id,
        profile_name: "demo".into(),
        source_resource: sr,
        aggregation: agg,
        provenance: Vec::new(),
        ingestion_sequence: 0,
    })
}

pub fn mapped_envelope() -> impl Strategy<Value = Envelope> {
    map_record().prop_map(Envelope::mapped)
}

/// Raw envelopes over `trees`, with the local identifier set or not.
pub fn raw_envelope(trees: Vec<MetadataTree>) -> impl Strategy<Value = Envelope> {
    (prop::sample::select(trees), any::<bool>(), any::<bool>()).prop_map(|(tree, with_id, drop_header)| {
        let mut tree = tree;
        if drop_header {
            tree.children.retain(|c| c.local_name() != "header");
        }
        let mut env = Envelope::raw(tree, "demo");
        if with_id {
            if let confluence_core::pipeline::Content::Raw(RawContent { local_id, id, .. }) = &mut env.content {
                *local_id = "oai:demo.example.org:item9999".into();
                *id = confluence_core::hash::mint_record_id("demo", local_id);
            }
        }
        env
    })
}

pub fn any_envelope(trees: Vec<MetadataTree>) -> impl Strategy<Value = Envelope> {
    prop_oneof![3 => mapped_envelope(), 1 => raw_envelope(trees)]
}
