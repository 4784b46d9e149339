//! File-plus-environment configuration shared by the CLI and the service.
//!
//! ```toml
//! [gateway]
//! endpoint = "http://127.0.0.1:8000/v1/chat/completions"
//! model = "my-model"
//! top_logprobs = 20
//!
//! [service]
//! port = 8080
//! ui_dir = "webui/dist"
//! ```
//!
//! Environment variables override the file: `STOPS_ENDPOINT`,
//! `STOPS_MODEL`, `STOPS_PORT`, `STOPS_UI_DIR`, and the credential in
//! `STOPS_API_KEY`, which is never written back out.

use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::CompletionConfig;
use crate::stops::DEFAULT_MIN_COVERAGE;

pub const PORT_ENV: &str = "STOPS_PORT";
pub const UI_DIR_ENV: &str = "STOPS_UI_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Load { .. } => "config_load",
            ConfigError::Env { .. } => "config_env",
            ConfigError::Invalid(_) => "config_invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: IpAddr,
    pub port: u16,
    /// Built UI assets served at `/`.
    pub ui_dir: Option<PathBuf>,
    /// Template name or path used when a request names none.
    pub default_template: String,
    pub min_coverage: f64,
    /// Log narrative text at debug level. Off unless set explicitly.
    pub log_narratives: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            ui_dir: None,
            default_template: "score-explanation".into(),
            min_coverage: DEFAULT_MIN_COVERAGE,
            log_narratives: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub gateway: CompletionConfig,
    pub service: ServiceConfig,
}

impl AppConfig {
    pub fn from_toml(src: &str) -> Result<Self, String> {
        toml::from_str(src).map_err(|e| e.to_string())
    }

    /// Reads `path` if given (defaults otherwise), then applies the
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let src = std::fs::read_to_string(p).map_err(|e| ConfigError::Load {
                    path: p.to_owned(),
                    message: e.to_string(),
                })?;
                Self::from_toml(&src).map_err(|message| ConfigError::Load { path: p.to_owned(), message })?
            }
            None => Self::default(),
        };
        config.apply_env_from(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        self.gateway.apply_env_from(&get);
        if let Some(v) = get(PORT_ENV).filter(|v| !v.is_empty()) {
            self.service.port = v.parse().map_err(|_| ConfigError::Env {
                var: PORT_ENV,
                message: format!("`{v}` is not a port number"),
            })?;
        }
        if let Some(v) = get(UI_DIR_ENV).filter(|v| !v.is_empty()) {
            self.service.ui_dir = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.gateway;
        if !(g.temperature >= 0.0 && g.temperature.is_finite()) {
            return Err(ConfigError::Invalid(format!("temperature {} must be >= 0", g.temperature)));
        }
        if g.top_logprobs == 0 {
            return Err(ConfigError::Invalid("top_logprobs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.service.min_coverage) {
            return Err(ConfigError::Invalid(format!(
                "min_coverage {} outside [0, 1]",
                self.service.min_coverage
            )));
        }
        Ok(())
    }
}
