//! Core of the confluence metadata aggregator.
//!
//! Everything in this crate is pure computation over in-memory values: the
//! application-profile model and its validation, the harvested-record tree,
//! the bundled controlled vocabularies, the date grammar, the gazetteer, the
//! linear enrichment pipeline with structural provenance, ingestion profiles
//! and the ingestion task state machine. It needs only `alloc`; file IO,
//! HTTP and storage live in the `confluence` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod date;
pub mod enrich;
pub mod geocode;
pub mod hash;
pub mod ingestion;
pub mod model;
pub mod pipeline;
pub mod profile;
pub mod provenance;
pub mod tree;
pub mod vocab;

mod table;

pub use geocode::{Gazetteer, Geocoder};
pub use model::{MapRecord, ValidationReport, Validator};
pub use pipeline::{run_pipeline, Envelope, StepRegistry};
pub use profile::{load_profile, resolve_pipeline, IngestionProfile};
pub use tree::MetadataTree;
