//! Service configuration file (TOML).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use gridspace_core::ingestion::SourceConfig;
use gridspace_core::Tick;
use serde::Deserialize;
use thiserror::Error;

use crate::alerts::DEFAULT_ALERT_CAPACITY;
use crate::store::{StoreConfig, DEFAULT_BUCKET_SIDE, DEFAULT_RETENTION};

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "GRIDSPACE_CONFIG";
pub const DEFAULT_CONFIG_PATH: &str = "gridspace.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_rules_dir() -> PathBuf {
    PathBuf::from("rules")
}

fn default_retention() -> Tick {
    DEFAULT_RETENTION
}

fn default_bucket_side() -> i64 {
    DEFAULT_BUCKET_SIDE
}

fn default_alert_capacity() -> usize {
    DEFAULT_ALERT_CAPACITY
}

fn default_rules_poll_ms() -> u64 {
    1000
}

fn default_delivery_timeout_ms() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_rules_dir")]
    pub rules_dir: PathBuf,
    /// Retention horizon in ticks.
    #[serde(default = "default_retention")]
    pub retention: Tick,
    #[serde(default = "default_bucket_side")]
    pub bucket_side: i64,
    #[serde(default = "default_alert_capacity")]
    pub alert_capacity: usize,
    /// How often the rules directory is re-read.
    #[serde(default = "default_rules_poll_ms")]
    pub rules_poll_ms: u64,
    /// When set, every API route except `/healthz` and `/ui` requires
    /// `Authorization: Bearer <token>`.
    #[serde(default)]
    pub token: Option<String>,
    /// Directory served under `/ui`.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// Initial feeder topology for the FDIR endpoints.
    #[serde(default)]
    pub topology: Option<PathBuf>,
    /// Static models loaded at startup: `.csv` load and generation tables,
    /// `.xml` or `.json` serialized invariants.
    #[serde(default)]
    pub models: Vec<PathBuf>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    /// Stakeholder name to reaction endpoint URL.
    #[serde(default)]
    pub delivery: BTreeMap<String, String>,
    #[serde(default = "default_delivery_timeout_ms")]
    pub delivery_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.rules_dir);
        self.ui_dir.as_mut().map(fix);
        self.topology.as_mut().map(fix);
        self.models.iter_mut().for_each(fix);
        for source in &mut self.sources {
            let is_url = source.uri.contains("://");
            if !is_url && Path::new(&source.uri).is_relative() {
                source.uri = base.join(&source.uri).display().to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.listen.parse::<SocketAddr>().is_err() {
            return invalid(format!("listen must be host:port, got {:?}", self.listen));
        }
        if self.retention < 0 {
            return invalid(format!("retention must not be negative, got {}", self.retention));
        }
        if self.bucket_side <= 0 {
            return invalid(format!("bucket_side must be positive, got {}", self.bucket_side));
        }
        if self.alert_capacity == 0 {
            return invalid("alert_capacity must be positive".into());
        }
        if self.token.as_deref().is_some_and(str::is_empty) {
            return invalid("token must not be empty".into());
        }
        for (i, source) in self.sources.iter().enumerate() {
            if let Err(e) = source.validate() {
                return invalid(format!("sources[{i}]: {e}"));
            }
        }
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            bucket_side: self.bucket_side,
            retention: self.retention,
        }
    }
}

/// The config file to use: an explicit path wins, then the environment
/// variable, then `gridspace.toml` in the working directory.
pub fn config_path(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(CONFIG_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => PathBuf::from(DEFAULT_CONFIG_PATH),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridspace_core::ingestion::SourceKind;

    const SAMPLE: &str = r#"
listen = "0.0.0.0:9000"
rules_dir = "demo/rules"
retention = 3600
token = "s3cret"

[[sources]]
kind = "file-replay"
uri = "demo/replay.frames"
poll_seconds = 60
owner = "cloud"
threshold = 1

[delivery]
grid-operator = "http://127.0.0.1:9100/reactions"
"#;

    #[test]
    fn parses_all_sections() {
        let cfg = ServiceConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.retention, 3600);
        assert_eq!(cfg.bucket_side, DEFAULT_BUCKET_SIDE);
        assert_eq!(cfg.sources[0].kind, SourceKind::FileReplay);
        assert_eq!(cfg.delivery["grid-operator"], "http://127.0.0.1:9100/reactions");
        assert_eq!(cfg.token.as_deref(), Some("s3cret"));
    }

    #[test]
    fn defaults_apply_to_an_empty_file() {
        let cfg = ServiceConfig::default();
        assert_eq!(cfg.retention, 86_400);
        assert_eq!(cfg.alert_capacity, 10_000);
        assert!(cfg.sources.is_empty());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml("listen = \"nowhere\"").is_err());
        assert!(ServiceConfig::from_toml("retention = -1").is_err());
        assert!(ServiceConfig::from_toml("unknown_key = 1").is_err());
        let bad_source = "[[sources]]\nkind = \"http-pull\"\nuri = \"http://x\"\nowner = \"cloud\"\nthreshold = 1\n";
        assert!(matches!(ServiceConfig::from_toml(bad_source), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gridspace.toml");
        std::fs::write(&path, SAMPLE).unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.rules_dir, dir.path().join("demo/rules"));
        assert_eq!(cfg.sources[0].uri, dir.path().join("demo/replay.frames").display().to_string());
    }

    #[test]
    fn explicit_path_wins() {
        assert_eq!(config_path(Some(Path::new("a.toml"))), PathBuf::from("a.toml"));
    }
}
