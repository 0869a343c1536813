use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::GatewayError;

pub const DEFAULT_MAX_REPLY_CHARS: usize = 8000;
pub const DEFAULT_TEMPERATURE_HINT: f32 = 0.2;
/// Model inference budget for a single call.
pub const DEFAULT_DEADLINE: Duration = Duration::from_millis(1000);

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub prompt: String,
    pub max_reply_chars: usize,
    pub temperature_hint: f32,
    #[serde(with = "duration_ms", rename = "deadline_ms")]
    pub deadline: Duration,
}

impl ProviderRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_reply_chars: DEFAULT_MAX_REPLY_CHARS,
            temperature_hint: DEFAULT_TEMPERATURE_HINT,
            deadline: DEFAULT_DEADLINE,
        }
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn with_max_reply_chars(mut self, max: usize) -> Self {
        self.max_reply_chars = max;
        self
    }

    pub fn with_temperature_hint(mut self, t: f32) -> Self {
        self.temperature_hint = t;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.deadline.is_zero() {
            return Err(GatewayError::InvalidRequest("deadline must be positive".into()));
        }
        if self.max_reply_chars == 0 {
            return Err(GatewayError::InvalidRequest("max_reply_chars must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature_hint) {
            return Err(GatewayError::InvalidRequest("temperature_hint must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    #[serde(with = "duration_ms", rename = "latency_ms")]
    pub latency: Duration,
    pub provider_id: String,
}

/// Upper bound on `max_retries`.
pub const MAX_RETRIES_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub max_retries: u32,
    #[serde(with = "duration_ms", rename = "backoff_base_ms")]
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    #[serde(with = "duration_ms", rename = "default_deadline_ms")]
    pub default_deadline: Duration,
    /// When false, an over-long reply fails with `BudgetExceeded` instead of
    /// being cut at `max_reply_chars`.
    pub truncate_replies: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_base: Duration::from_millis(100),
            max_in_flight: 16,
            default_deadline: DEFAULT_DEADLINE,
            truncate_replies: false,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(GatewayError::InvalidConfig(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if self.default_deadline.is_zero() {
            return Err(GatewayError::InvalidConfig("default_deadline must be positive".into()));
        }
        Ok(())
    }
}

/// A transport-level failure; the gateway may retry these.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport error: {0}")]
pub struct TransportError(pub String);

/// A model backend. Implementations only perform one attempt; deadlines,
/// retries and concurrency limits belong to the gateway.
#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError>;
}
