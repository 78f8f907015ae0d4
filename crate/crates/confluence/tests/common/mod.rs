#![allow(dead_code)]

pub mod strategies;

use std::path::{Path, PathBuf};

use confluence::engine::{Engine, EngineConfig};
use confluence::mock::{load_fixture_dir, MockOai, MockRecord};
use serde_json::Value;
use tempfile::TempDir;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The 250-record oai_dc corpus.
pub fn corpus() -> Vec<MockRecord> {
    load_fixture_dir(&fixtures().join("oai_dc")).expect("fixture corpus")
}

/// The demo profile pointed at `endpoint`.
pub fn demo_profile(endpoint: &str) -> Value {
    let bytes = std::fs::read(fixtures().join("profiles/demo.json")).unwrap();
    let mut v: Value = serde_json::from_slice(&bytes).unwrap();
    v["harvest"]["endpoint"] = Value::String(endpoint.to_owned());
    v
}

pub struct Env {
    pub dir: TempDir,
    pub engine: Engine,
}

pub fn engine() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(EngineConfig::new(dir.path().join("data"))).unwrap();
    Env { dir, engine }
}

/// An engine with the demo profile installed against a mock serving the
/// corpus in pages of 100.
pub fn demo() -> (Env, MockOai) {
    let mock = MockOai::start(corpus(), 100, 0).unwrap();
    let env = engine();
    let profile = demo_profile(&mock.url());
    env.engine.install_profile(&serde_json::to_vec(&profile).unwrap()).unwrap();
    (env, mock)
}
