//! Generic HTTP provider speaking the widely used chat-completions wire
//! format (`POST {endpoint}` with `{"model", "messages", "temperature",
//! "max_tokens"}` → `{"choices": [{"message": {"content": ...}}]}`).

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::provider::{LlmProvider, ProviderRequest, TransportError};

/// Environment variable holding the bearer token for the HTTP provider.
pub const TOKEN_ENV_VAR: &str = "LLM_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_model() -> String {
    "deepseek-chat".into()
}

fn default_token_env() -> String {
    TOKEN_ENV_VAR.into()
}

#[derive(Debug)]
pub struct HttpProvider {
    id: String,
    endpoint: String,
    model: String,
    token: Option<String>,
    client: reqwest::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl HttpProvider {
    /// Builds the provider, reading the token from the configured
    /// environment variable. A missing token is allowed for local endpoints.
    pub fn from_config(config: &HttpProviderConfig) -> Self {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            tracing::warn!(var = %config.token_env, "no API token set for the HTTP provider");
        }
        Self::new(&config.endpoint, &config.model, token)
    }

    pub fn new(endpoint: &str, model: &str, token: Option<String>) -> Self {
        Self {
            id: format!("http:{model}"),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            token,
            client: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl LlmProvider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature_hint,
            // rough chars-per-token heuristic
            "max_tokens": request.max_reply_chars.div_ceil(3),
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(TransportError(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| TransportError(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}
