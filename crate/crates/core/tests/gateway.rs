mod common;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use proptest::prelude::*;
use psysim::gateway::{
    render_prompt, GatewayError, LlmGateway, LlmProvider, ProviderConfig, ProviderRequest, ScriptedProvider,
    TemplateSet, TransportError, UNSCRIPTED_MARKER,
};

use common::{fast_config, FnProvider};

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

    async fn call(&self, _r: &ProviderRequest) -> Result<String, TransportError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(TransportError(format!("refused #{n}")))
        } else {
            Ok("ok".into())
        }
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attempts_never_exceed_retry_budget(failures in 0u32..8, max_retries in 0u32..5) {
        let flaky = Arc::new(Flaky { failures, calls: AtomicU32::new(0) });
        let gw = LlmGateway::new(flaky.clone(), ProviderConfig { max_retries, ..fast_config() }).unwrap();
        let result = runtime().block_on(gw.complete_prompt("ping"));
        let calls = flaky.calls.load(Ordering::SeqCst);
        if failures <= max_retries {
            prop_assert_eq!(result.unwrap().text, "ok");
            prop_assert_eq!(calls, failures + 1);
        } else {
            match result {
                Err(GatewayError::ProviderUnavailable { attempts, .. }) => prop_assert_eq!(attempts, max_retries + 1),
                other => prop_assert!(false, "unexpected {:?}", other),
            }
            prop_assert_eq!(calls, max_retries + 1);
        }
    }

    #[test]
    fn replies_over_budget_fail_or_truncate(len in 1usize..200, max in 1usize..200, truncate: bool) {
        let text = "x".repeat(len);
        let gw = LlmGateway::new(
            Arc::new(FnProvider::new(move |_| Ok(text.clone()))),
            ProviderConfig { truncate_replies: truncate, ..fast_config() },
        ).unwrap();
        let result = runtime().block_on(gw.complete(ProviderRequest::new("p").with_max_reply_chars(max)));
        match (len <= max, truncate, result) {
            (true, _, Ok(r)) => prop_assert_eq!(r.text.len(), len),
            (false, true, Ok(r)) => prop_assert_eq!(r.text.len(), max),
            (false, false, Err(GatewayError::BudgetExceeded { len: l, max: m })) => {
                prop_assert_eq!(l, len);
                prop_assert_eq!(m, max);
            }
            (_, _, other) => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}

struct Slow;

#[async_trait]
impl LlmProvider for Slow {
    fn id(&self) -> &str {
        "slow"
    }

    async fn call(&self, _r: &ProviderRequest) -> Result<String, TransportError> {
        tokio::time::sleep(Duration::from_secs(60)).await;
        Ok("late".into())
    }
}

#[tokio::test(start_paused = true)]
async fn deadline_is_enforced_without_retry() {
    let gw = LlmGateway::new(Arc::new(Slow), fast_config()).unwrap();
    let err = gw
        .complete(ProviderRequest::new("p").with_deadline(Duration::from_millis(250)))
        .await
        .unwrap_err();
    assert_eq!(err, GatewayError::Timeout { deadline_ms: 250 });
}

#[tokio::test]
async fn invalid_requests_are_rejected_before_the_provider() {
    let calls = Arc::new(AtomicU32::new(0));
    let c = calls.clone();
    let gw = LlmGateway::new(
        Arc::new(FnProvider::new(move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok("x".into())
        })),
        fast_config(),
    )
    .unwrap();
    for req in [
        ProviderRequest::new(""),
        ProviderRequest::new("p").with_deadline(Duration::ZERO),
        ProviderRequest::new("p").with_max_reply_chars(0),
        ProviderRequest::new("p").with_temperature_hint(1.5),
    ] {
        assert!(matches!(gw.complete(req).await, Err(GatewayError::InvalidRequest(_))));
    }
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn config_limits_are_validated() {
    let provider = Arc::new(ScriptedProvider::demo());
    for bad in [
        ProviderConfig { max_retries: 11, ..Default::default() },
        ProviderConfig { max_in_flight: 0, ..Default::default() },
        ProviderConfig { default_deadline: Duration::ZERO, ..Default::default() },
    ] {
        assert!(matches!(LlmGateway::new(provider.clone(), bad), Err(GatewayError::InvalidConfig(_))));
    }
}

#[test]
fn scripted_replies_are_pure_functions_of_the_prompt() {
    let a = ScriptedProvider::demo();
    let b = ScriptedProvider::demo();
    let prompt = "[PATIENT SIMULATION]\nCondition profile: MDD\nLatest question: How is your sleep?";
    assert_eq!(a.reply_for(prompt), b.reply_for(prompt));
    assert!(a.reply_for("something nobody scripted").starts_with(UNSCRIPTED_MARKER));
}

#[test]
fn every_seed_template_renders_with_its_placeholders() {
    let set = TemplateSet::seed();
    for id in ["case_generation", "patient_reply", "diagnosis_advice", "prescription_advice", "feedback_elaboration"] {
        let t = set.get(id).unwrap_or_else(|e| panic!("{id}: {e}"));
        let vars = t.placeholders().into_iter().map(|p| (p.to_string(), format!("<{p}>"))).collect();
        let text = render_prompt(t, &vars).unwrap();
        assert!(!text.contains("{{"), "{id} left a placeholder: {text}");
    }
}

#[test]
fn missing_parameters_are_reported() {
    let set = TemplateSet::seed();
    let t = set.get("patient_reply").unwrap();
    assert!(render_prompt(t, &Default::default()).is_err());
}
