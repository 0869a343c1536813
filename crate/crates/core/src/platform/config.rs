//! Service configuration, read from a TOML file.
//!
//! ```toml
//! seed = 42
//!
//! [server]
//! bind = "127.0.0.1"
//! port = 8080
//!
//! [provider]
//! kind = "http"
//! endpoint = "https://llm.example.org/v1/chat/completions"
//! max_retries = 2
//! default_deadline_ms = 1000
//!
//! [security.tls]
//! cert_path = "/etc/psysim/tls.crt"
//! key_path = "/etc/psysim/tls.key"
//! min_version = "1.3"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::ContextBudget;
use crate::evaluation::Weights;
use crate::gateway::{HttpProviderConfig, ProviderConfig, TOKEN_ENV_VAR};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// Scripted provider: reply script. The embedded demo script is used
    /// when absent.
    pub script: Option<PathBuf>,
    /// HTTP provider settings.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: String,
    #[serde(flatten)]
    pub limits: ProviderConfig,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Scripted,
            script: None,
            endpoint: None,
            model: None,
            token_env: TOKEN_ENV_VAR.into(),
            limits: ProviderConfig::default(),
        }
    }
}

impl ProviderSection {
    pub fn http(&self) -> Result<HttpProviderConfig, ConfigError> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| ConfigError::Invalid("provider.endpoint is required for the http provider".into()))?;
        Ok(HttpProviderConfig {
            endpoint,
            model: self.model.clone().unwrap_or_else(|| "deepseek-chat".into()),
            token_env: self.token_env.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthConfig {
    pub token_ttl_secs: u64,
    pub lockout_threshold: u32,
    /// Environment variable holding the token signing key. A random key is
    /// generated per process when it is unset.
    pub jwt_secret_env: String,
    /// Administrator account created at startup when the credential
    /// variable is set and the login does not exist yet.
    pub bootstrap_admin: String,
    pub bootstrap_credential_env: String,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            token_ttl_secs: 8 * 3600,
            lockout_threshold: 5,
            jwt_secret_env: "PSYSIM_JWT_SECRET".into(),
            bootstrap_admin: "admin".into(),
            bootstrap_credential_env: "PSYSIM_ADMIN_CREDENTIAL".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StorageConfig {
    /// File-backed store root; in-memory when absent.
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacyConfig {
    /// Names scrubbed from generated cases and stored transcripts.
    pub roster: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsConfig {
    pub cert_path: PathBuf,
    pub key_path: PathBuf,
    #[serde(default = "default_tls_version")]
    pub min_version: String,
}

fn default_tls_version() -> String {
    "1.3".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtRestConfig {
    #[serde(default = "default_cipher")]
    pub cipher: String,
    /// Environment variable holding the storage key.
    pub key_env: String,
}

fn default_cipher() -> String {
    "AES-256-GCM".into()
}

/// Transport and at-rest encryption are provided by the deployment (reverse
/// proxy, encrypted volume). These settings declare the requirements the
/// deployment must meet and are validated at startup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityConfig {
    pub tls: Option<TlsConfig>,
    pub at_rest: Option<AtRestConfig>,
}

impl SecurityConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(tls) = &self.tls {
            let ok = match tls.min_version.split_once('.') {
                Some((major, minor)) => match (major.parse::<u32>(), minor.parse::<u32>()) {
                    (Ok(major), Ok(minor)) => (major, minor) >= (1, 3),
                    _ => false,
                },
                None => false,
            };
            if !ok {
                return Err(ConfigError::Invalid(format!(
                    "security.tls.min_version {} is below 1.3",
                    tls.min_version
                )));
            }
        }
        if let Some(at_rest) = &self.at_rest {
            if !at_rest.cipher.to_ascii_uppercase().starts_with("AES-256") {
                return Err(ConfigError::Invalid(format!(
                    "security.at_rest.cipher {} is not an AES-256 mode",
                    at_rest.cipher
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub seed: u64,
    pub kb_dir: Option<PathBuf>,
    pub server: ServerConfig,
    pub provider: ProviderSection,
    pub auth: AuthConfig,
    pub storage: StorageConfig,
    pub security: SecurityConfig,
    pub privacy: PrivacyConfig,
    pub dialogue: ContextBudget,
    pub evaluation: Weights,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            kb_dir: None,
            server: ServerConfig::default(),
            provider: ProviderSection::default(),
            auth: AuthConfig::default(),
            storage: StorageConfig::default(),
            security: SecurityConfig::default(),
            privacy: PrivacyConfig::default(),
            dialogue: ContextBudget::default(),
            evaluation: Weights::default(),
        }
    }
}

impl PlatformConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: PlatformConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.security.validate()?;
        self.provider.limits.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Weights::new(self.evaluation.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.auth.lockout_threshold == 0 || self.auth.token_ttl_secs == 0 {
            return Err(ConfigError::Invalid("auth limits must be positive".into()));
        }
        if self.dialogue.max_turns == 0 {
            return Err(ConfigError::Invalid("dialogue.max_turns must be positive".into()));
        }
        if self.provider.kind == ProviderKind::Http {
            self.provider.http()?;
        }
        Ok(())
    }
}
