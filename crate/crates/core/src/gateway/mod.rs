//! Single entry point for all model traffic.
//!
//! Callers render a prompt, wrap it in a [`ProviderRequest`] and hand it to
//! [`LlmGateway::complete`], which enforces the per-attempt deadline, retries
//! transport failures with exponential backoff and caps the number of
//! requests in flight across the whole process.

mod http;
mod prompt;
mod provider;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tokio::sync::Semaphore;

pub use http::{HttpProvider, HttpProviderConfig, TOKEN_ENV_VAR};
pub use prompt::{params, render_layer, render_prompt, LayerName, PromptError, PromptLayer, PromptTemplate, TemplateSet};
pub use provider::{
    LlmProvider, ProviderConfig, ProviderRequest, ProviderResponse, TransportError, DEFAULT_DEADLINE,
    DEFAULT_MAX_REPLY_CHARS, DEFAULT_TEMPERATURE_HINT, MAX_RETRIES_LIMIT,
};
pub use scripted::{load_script, prompt_digest, ScriptError, ScriptedProvider, UNSCRIPTED_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("provider did not answer within {deadline_ms} ms")]
    Timeout { deadline_ms: u64 },
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    ProviderUnavailable { attempts: u32, last_error: String },
    #[error("reply of {len} chars exceeds the budget of {max}")]
    BudgetExceeded { len: usize, max: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    config: ProviderConfig,
    in_flight: Arc<Semaphore>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("provider", &self.provider.id())
            .field("config", &self.config)
            .finish()
    }
}

fn backoff(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16))
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>, config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let in_flight = Arc::new(Semaphore::new(config.max_in_flight));
        Ok(Self {
            provider,
            config,
            in_flight,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    /// A request for `prompt` using the configured default deadline.
    pub fn request(&self, prompt: impl Into<String>) -> ProviderRequest {
        ProviderRequest::new(prompt).with_deadline(self.config.default_deadline)
    }

    /// Sends `prompt` with default request settings.
    pub async fn complete_prompt(&self, prompt: impl Into<String>) -> Result<ProviderResponse, GatewayError> {
        self.complete(self.request(prompt)).await
    }

    pub async fn complete(&self, request: ProviderRequest) -> Result<ProviderResponse, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let mut attempt: u32 = 0;
        loop {
            let outcome = {
                let _permit = self
                    .in_flight
                    .acquire()
                    .await
                    .expect("gateway semaphore is never closed");
                tokio::time::timeout(request.deadline, self.provider.call(&request)).await
            };
            match outcome {
                Err(_) => {
                    tracing::warn!(provider = self.provider.id(), attempt, "provider call timed out");
                    return Err(GatewayError::Timeout {
                        deadline_ms: request.deadline.as_millis() as u64,
                    });
                }
                Ok(Ok(text)) => {
                    let text = self.enforce_budget(text, request.max_reply_chars)?;
                    return Ok(ProviderResponse {
                        text,
                        latency: started.elapsed(),
                        provider_id: self.provider.id().to_string(),
                    });
                }
                Ok(Err(err)) => {
                    if attempt >= self.config.max_retries {
                        return Err(GatewayError::ProviderUnavailable {
                            attempts: attempt + 1,
                            last_error: err.0,
                        });
                    }
                    let delay = backoff(self.config.backoff_base, attempt);
                    tracing::debug!(provider = self.provider.id(), attempt, ?delay, error = %err, "retrying provider call");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }

    fn enforce_budget(&self, text: String, max: usize) -> Result<String, GatewayError> {
        let len = text.chars().count();
        if len <= max {
            return Ok(text);
        }
        if self.config.truncate_replies {
            Ok(text.chars().take(max).collect())
        } else {
            Err(GatewayError::BudgetExceeded { len, max })
        }
    }
}

/// Wraps a provider and records every prompt it receives, in call order.
pub struct RecordingProvider {
    inner: Arc<dyn LlmProvider>,
    prompts: Mutex<Vec<String>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn LlmProvider>) -> Self {
        Self {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }

    pub fn clear(&self) {
        self.prompts.lock().clear();
    }
}

#[async_trait::async_trait]
impl LlmProvider for RecordingProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        self.prompts.lock().push(request.prompt.clone());
        self.inner.call(request).await
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

    use async_trait::async_trait;

    use super::*;

    struct Sleepy(Duration);

    #[async_trait]
    impl LlmProvider for Sleepy {
        fn id(&self) -> &str {
            "sleepy"
        }
        async fn call(&self, _: &ProviderRequest) -> Result<String, TransportError> {
            tokio::time::sleep(self.0).await;
            Ok("late".into())
        }
    }

    /// Fails the first `failures` calls, then answers.
    struct Flaky {
        failures: u32,
        calls: AtomicU32,
    }

    #[async_trait]
    impl LlmProvider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        async fn call(&self, _: &ProviderRequest) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(TransportError(format!("failure {n}")))
            } else {
                Ok("ok".into())
            }
        }
    }

    struct Fixed(String);

    #[async_trait]
    impl LlmProvider for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        async fn call(&self, _: &ProviderRequest) -> Result<String, TransportError> {
            Ok(self.0.clone())
        }
    }

    fn config(max_retries: u32) -> ProviderConfig {
        ProviderConfig {
            max_retries,
            backoff_base: Duration::from_millis(1),
            ..ProviderConfig::default()
        }
    }

    #[tokio::test(start_paused = true)]
    async fn slow_provider_times_out_without_retry() {
        let gw = LlmGateway::new(Arc::new(Sleepy(Duration::from_millis(2000))), config(0)).unwrap();
        let req = ProviderRequest::new("hi").with_deadline(Duration::from_millis(1000));
        let started = tokio::time::Instant::now();
        assert_eq!(gw.complete(req).await, Err(GatewayError::Timeout { deadline_ms: 1000 }));
        assert!(started.elapsed() < Duration::from_millis(1500));
    }

    #[tokio::test]
    async fn retries_exhaust_into_provider_unavailable() {
        let flaky = Arc::new(Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
        });
        let gw = LlmGateway::new(flaky.clone(), config(2)).unwrap();
        let err = gw.complete(ProviderRequest::new("hi")).await.unwrap_err();
        assert!(matches!(err, GatewayError::ProviderUnavailable { attempts: 3, .. }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn transient_failure_recovers_within_retry_budget() {
        let flaky = Arc::new(Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
        });
        let gw = LlmGateway::new(flaky, config(2)).unwrap();
        let resp = gw.complete(ProviderRequest::new("hi")).await.unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(resp.provider_id, "flaky");
    }

    #[tokio::test(start_paused = true)]
    async fn backoff_doubles_per_attempt() {
        let flaky = Arc::new(Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
        });
        let cfg = ProviderConfig {
            max_retries: 3,
            backoff_base: Duration::from_millis(100),
            ..ProviderConfig::default()
        };
        let gw = LlmGateway::new(flaky, cfg).unwrap();
        let started = tokio::time::Instant::now();
        gw.complete(ProviderRequest::new("hi")).await.unwrap();
        // 100 + 200 + 400
        assert_eq!(started.elapsed(), Duration::from_millis(700));
    }

    #[tokio::test]
    async fn over_budget_reply_fails_or_truncates() {
        let gw = LlmGateway::new(Arc::new(Fixed("abcdef".into())), config(0)).unwrap();
        let req = ProviderRequest::new("x").with_max_reply_chars(4);
        assert_eq!(gw.complete(req.clone()).await, Err(GatewayError::BudgetExceeded { len: 6, max: 4 }));

        let cfg = ProviderConfig {
            truncate_replies: true,
            ..config(0)
        };
        let gw = LlmGateway::new(Arc::new(Fixed("abcdef".into())), cfg).unwrap();
        assert_eq!(gw.complete(req).await.unwrap().text, "abcd");
    }

    #[tokio::test]
    async fn invalid_requests_and_configs_are_rejected() {
        let gw = LlmGateway::new(Arc::new(Fixed("a".into())), config(0)).unwrap();
        assert!(matches!(gw.complete(ProviderRequest::new("")).await, Err(GatewayError::InvalidRequest(_))));
        let zero = ProviderRequest::new("x").with_deadline(Duration::ZERO);
        assert!(matches!(gw.complete(zero).await, Err(GatewayError::InvalidRequest(_))));

        let bad = ProviderConfig {
            max_in_flight: 0,
            ..ProviderConfig::default()
        };
        assert!(matches!(LlmGateway::new(Arc::new(Fixed("a".into())), bad), Err(GatewayError::InvalidConfig(_))));
        let bad = ProviderConfig {
            max_retries: MAX_RETRIES_LIMIT + 1,
            ..ProviderConfig::default()
        };
        assert!(LlmGateway::new(Arc::new(Fixed("a".into())), bad).is_err());
    }

    struct Counting {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    #[async_trait]
    impl LlmProvider for Counting {
        fn id(&self) -> &str {
            "counting"
        }
        async fn call(&self, _: &ProviderRequest) -> Result<String, TransportError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            tokio::time::sleep(Duration::from_millis(5)).await;
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("done".into())
        }
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn in_flight_never_exceeds_limit() {
        let counting = Arc::new(Counting {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let cfg = ProviderConfig {
            max_in_flight: 3,
            ..ProviderConfig::default()
        };
        let gw = Arc::new(LlmGateway::new(counting.clone(), cfg).unwrap());
        let handles: Vec<_> = (0..40)
            .map(|i| {
                let gw = gw.clone();
                tokio::spawn(async move { gw.complete(ProviderRequest::new(format!("p{i}"))).await })
            })
            .collect();
        for h in handles {
            h.await.unwrap().unwrap();
        }
        let peak = counting.peak.load(Ordering::SeqCst);
        assert!(peak <= 3, "peak {peak}");
        assert!(peak >= 2, "semaphore should still allow parallelism, peak {peak}");
    }
}
