//! Stable hashing: record-id minting, content hashes and parameter hashes.
//!
//! All hashes are XXH3 (seed 0). The 128-bit variant backs record ids and
//! content hashes; the 64-bit variant fingerprints step parameters. These
//! algorithms are fixed for the lifetime of a data directory: changing them
//! would re-mint every id and mark every stored record as changed.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde_json::Value;
use xxhash_rust::xxh3::{xxh3_128, xxh3_64};

/// 128-bit XXH3 of `bytes`.
pub fn hash128(bytes: &[u8]) -> u128 {
    xxh3_128(bytes)
}

/// Lowercase, zero-padded 32-character hex of a 128-bit hash.
pub fn hex128(h: u128) -> String {
    let mut out = String::with_capacity(32);
    write!(out, "{h:032x}").unwrap();
    out
}

/// Mints the record identifier for `local_id` harvested under `profile_name`.
///
/// The hashed string is `"{profile_name}--{local_id}"`, so the same source
/// record always maps to the same id across re-ingests.
pub fn mint_record_id(profile_name: &str, local_id: &str) -> String {
    let mut key = String::with_capacity(profile_name.len() + local_id.len() + 2);
    key.push_str(profile_name);
    key.push_str("--");
    key.push_str(local_id);
    hex128(hash128(key.as_bytes()))
}

/// 16-character hex fingerprint of a step's parameters (canonical JSON).
pub fn params_hash(params: &Value) -> String {
    let mut out = String::with_capacity(16);
    write!(out, "{:016x}", xxh3_64(&canonical_json(params))).unwrap();
    out
}

/// Serializes `value` with object keys sorted by byte order and no
/// insignificant whitespace.
pub fn canonical_json(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(key).expect("string serialization"));
                out.push(b':');
                write_canonical(&map[key], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        leaf => out.extend(serde_json::to_vec(leaf).expect("leaf serialization")),
    }
}
