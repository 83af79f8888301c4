//! Service configuration file.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Session journals and embedding snapshots live under `<data_dir>/sessions`.
    pub data_dir: PathBuf,
    /// Dimension of the coordinates returned by snapshots.
    #[serde(default = "default_dim")]
    pub snapshot_dim: usize,
    /// Selected queries kept ready ahead of the labeler.
    #[serde(default = "default_prefetch")]
    pub prefetch: usize,
    /// How long a next-query request waits for background selection before
    /// answering 503.
    #[serde(default = "default_wait_ms")]
    pub wait_ms: u64,
    #[serde(default)]
    pub catalogs: BTreeMap<String, CatalogConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    /// JSON-lines items, `{"id": 0, "payload": "..."}`.
    pub items: PathBuf,
    /// Triplets the initial embedding is trained on; replaces the burn-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preload: Option<PathBuf>,
    /// Held-out triplets for accuracy reporting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<PathBuf>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_dim() -> usize {
    2
}

fn default_prefetch() -> usize {
    2
}

fn default_wait_ms() -> u64 {
    10_000
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        if cfg.snapshot_dim == 0 {
            return Err(ServiceError::Config(
                "snapshot_dim must be at least 1".into(),
            ));
        }
        if cfg.prefetch == 0 {
            return Err(ServiceError::Config("prefetch must be at least 1".into()));
        }
        Ok(cfg)
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut cfg.data_dir);
        for c in cfg.catalogs.values_mut() {
            fix(&mut c.items);
            if let Some(p) = c.preload.as_mut() {
                fix(p);
            }
            if let Some(p) = c.holdout.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }
}
