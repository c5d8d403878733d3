use std::fs;
use std::path::{Path, PathBuf};

use mervin_core::ingest::IngestConfig;
use mervin_core::providers::ProvidersConfig;
use mervin_core::query::QueryConfig;
use serde::{Deserialize, Serialize};

use crate::StartupError;

/// Service settings, read from TOML:
///
/// ```toml
/// bind_address = "127.0.0.1:8080"
/// store_path = "store"
/// cors_allowed_origins = ["http://localhost:5173"]
///
/// [providers.image]
/// kind = "remote"
/// endpoint_url = "http://gpu-host:9000/embed/clip"
/// dim = 768
///
/// [query]
/// frame_k = 1000
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind_address: String,
    pub store_path: PathBuf,
    /// Defaults to `<store_path>/submission.zip`.
    pub submission_path: Option<PathBuf>,
    pub cors_allowed_origins: Vec<String>,
    pub snapshot_on_shutdown: bool,
    pub providers: ProvidersConfig,
    pub query: QueryConfig,
    pub ingest: IngestConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind_address: "127.0.0.1:8080".into(),
            store_path: PathBuf::from("store"),
            submission_path: None,
            cors_allowed_origins: Vec::new(),
            snapshot_on_shutdown: true,
            providers: ProvidersConfig::default(),
            query: QueryConfig::default(),
            ingest: IngestConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, StartupError> {
        toml::from_str(text).map_err(|e| StartupError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let text = fs::read_to_string(path)
            .map_err(|e| StartupError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn submission_path(&self) -> PathBuf {
        self.submission_path
            .clone()
            .unwrap_or_else(|| self.store_path.join("submission.zip"))
    }

    pub fn validate(&self) -> Result<(), StartupError> {
        let bad = |e: mervin_core::Error| StartupError::Config(e.to_string());
        self.query.validate().map_err(bad)?;
        self.ingest.validate().map_err(bad)?;
        for p in [&self.providers.text, &self.providers.image, &self.providers.transform] {
            p.validate().map_err(bad)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mervin_core::providers::ProviderKind;

    #[test]
    fn parses_partial_toml() {
        let c = ServiceConfig::from_toml(
            r#"
            bind_address = "0.0.0.0:9000"
            cors_allowed_origins = ["http://console.local"]
            [providers.image]
            kind = "remote"
            endpoint_url = "http://gpu:9000/clip"
            dim = 768
            [query]
            frame_k = 500
            "#,
        )
        .unwrap();
        assert_eq!(c.bind_address, "0.0.0.0:9000");
        assert_eq!(c.providers.image.kind, ProviderKind::Remote);
        assert_eq!(c.providers.text.kind, ProviderKind::Builtin);
        assert_eq!(c.query.frame_k, 500);
        assert_eq!(c.query.w_pair, 10.0);
        assert!(c.validate().is_ok());
        assert_eq!(c.submission_path(), PathBuf::from("store/submission.zip"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ServiceConfig::from_toml("bind = 1").is_err());
        let c = ServiceConfig::from_toml("[query]\nframe_k = 0").unwrap();
        assert!(c.validate().is_err());
    }
}
