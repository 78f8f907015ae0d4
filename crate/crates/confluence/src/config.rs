//! `confluence.toml` settings with `CONFLUENCE_*` environment overrides.
//!
//! ```toml
//! data_dir = "data"
//! bind = "127.0.0.1"
//! port = 8080
//! workers = 0        # 0: one per core
//! ui_dir = "ui"      # optional; served at /ui/
//! ```

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::engine::EngineConfig;

pub const CONFIG_FILE: &str = "confluence.toml";
pub const ENV_PREFIX: &str = "CONFLUENCE_";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub bind: IpAddr,
    pub port: u16,
    pub workers: usize,
    pub ui_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), bind: IpAddr::V4(Ipv4Addr::LOCALHOST), port: 8080, workers: 0, ui_dir: None }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: String, message: String },
}

impl Settings {
    /// Reads `path`, or `confluence.toml` in the working directory when it
    /// exists, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut settings = match path {
            Some(p) => Self::from_file(p)?,
            None if Path::new(CONFIG_FILE).is_file() => Self::from_file(Path::new(CONFIG_FILE))?,
            None => Self::default(),
        };
        settings.apply_env(|k| std::env::var(k).ok())?;
        Ok(settings)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::File { path: path.to_owned(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }

    /// Applies `CONFLUENCE_DATA_DIR`, `_BIND`, `_PORT`, `_WORKERS` and
    /// `_UI_DIR` as returned by `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(var: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env { var: var.to_owned(), message: e.to_string() })
        }
        let var = |name: &str| {
            let key = format!("{ENV_PREFIX}{name}");
            get(&key).map(|v| (key, v))
        };
        if let Some((_, v)) = var("DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some((k, v)) = var("BIND") {
            self.bind = parsed(&k, &v)?;
        }
        if let Some((k, v)) = var("PORT") {
            self.port = parsed(&k, &v)?;
        }
        if let Some((k, v)) = var("WORKERS") {
            self.workers = parsed(&k, &v)?;
        }
        if let Some((_, v)) = var("UI_DIR") {
            self.ui_dir = Some(v.into());
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig { workers: self.workers, ..EngineConfig::new(&self.data_dir) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        std::fs::write(&path, "data_dir = \"/srv/agg\"\nport = 9000\n").unwrap();
        let mut s = Settings::from_file(&path).unwrap();
        assert_eq!(s.data_dir, PathBuf::from("/srv/agg"));
        assert_eq!(s.port, 9000);
        assert_eq!(s.workers, 0);

        let env = [("CONFLUENCE_PORT", "9100"), ("CONFLUENCE_BIND", "0.0.0.0"), ("CONFLUENCE_WORKERS", "4")];
        s.apply_env(|k| env.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())).unwrap();
        assert_eq!((s.port, s.bind.to_string(), s.workers), (9100, "0.0.0.0".to_owned(), 4));

        let bad = s.apply_env(|k| (k == "CONFLUENCE_PORT").then(|| "http".to_owned()));
        assert!(matches!(bad, Err(ConfigError::Env { .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        std::fs::write(&path, "datadir = \"x\"\n").unwrap();
        assert!(Settings::from_file(&path).is_err());
    }
}
