//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Thresholds below are fixed; do not relax them to get a green run.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use psysim::cases::{seed_cases, GenerationSpec, TaskCoordinator, TaskState};
use psysim::diagnosis::match_criteria;
use psysim::evaluation::{DimensionScores, Weights};
use psysim::exams::recommend;
use psysim::gateway::{LlmProvider, ProviderRequest, ScriptedProvider, TransportError};
use psysim::ids::IdGenerator;
use psysim::kb::{KnowledgeBase, SymptomInstance};
use psysim::platform::service::{DiagnosisRequest, OpenSessionRequest, PrescriptionRequest, ReviewRequest, TurnRequest};
use psysim::platform::walkthrough::{self, MDD_CONSULTATION};
use psysim::platform::{api, rbac, PlatformService, Role};
use psysim::prescription::{check_interactions, review, PrescriptionLine, ReviewPolicy, Severity, Verdict};

use common::*;

const LOOP_RUNS: usize = 3;
const LOOP_BUDGET: Duration = Duration::from_secs(30);
const FUZZED_DRAFTS: usize = 1000;
const CASE_BUDGET: Duration = Duration::from_secs(5);
const ORACLE_KBS: usize = 1000;
const ORACLE_DRAFTS: usize = 1000;
const MAX_SUBSET_TAGS: usize = 12;
const COMPOSITE_TOLERANCE: f64 = 1e-9;
const SAFETY_CORPUS: usize = 50;
const USERS: usize = 100;
const REQUESTS_PER_USER: usize = 20;
const P95_BUDGET: Duration = Duration::from_millis(500);
const TURN_OVERHEAD_BUDGET: Duration = Duration::from_millis(100);
const DIAGNOSIS_BUDGET: Duration = Duration::from_secs(1);
const CACHE_WRITERS: usize = 16;
const ADVISORY_TEXTS: usize = 200;

type Outcome = Result<String, String>;

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("deterministic end-to-end loop", Box::new(|| rt.block_on(deterministic_loop()))),
        ("case pipeline chain and fuzzing", Box::new(|| rt.block_on(case_pipeline()))),
        ("oracle equivalence suites", Box::new(oracle_suites)),
        ("ground-truth recovery", Box::new(ground_truth)),
        ("safety gating", Box::new(safety_gating)),
        ("latency", Box::new(|| rt.block_on(latency()))),
        ("security properties", Box::new(|| rt.block_on(security()))),
        ("rule authority", Box::new(|| rt.block_on(rule_authority()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(detail.into())
    }
}

async fn deterministic_loop() -> Outcome {
    let started = Instant::now();
    let mut outputs = Vec::new();
    for _ in 0..LOOP_RUNS {
        let service = PlatformService::scripted(42);
        let artifacts = walkthrough::run(&service, "MDD", &MDD_CONSULTATION).await.map_err(|e| e.to_string())?;
        ensure(artifacts.replay.entries.len() == 2 * MDD_CONSULTATION.len(), "consultation is not 10 turns")?;
        outputs.push(artifacts.to_json());
    }
    let elapsed = started.elapsed();
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), "artifacts differ between runs")?;
    ensure(elapsed < LOOP_BUDGET, format!("{LOOP_RUNS} runs took {elapsed:?}"))?;
    Ok(format!("{LOOP_RUNS} runs byte-identical ({} bytes), {elapsed:.2?} total", outputs[0].len()))
}

async fn case_pipeline() -> Outcome {
    let coord = TaskCoordinator::new(
        Arc::new(pipeline_with(Arc::new(ScriptedProvider::demo()), 42)),
        Arc::new(IdGenerator::new()),
    );
    let mut slowest = Duration::ZERO;
    for code in ["MDD", "GAD", "PD", "SCZ", "BP1", "ADJ"] {
        let started = Instant::now();
        let task = coord
            .generate(GenerationSpec { disorder_code: code.into(), difficulty: 3 })
            .await
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(started.elapsed());
        ensure(task.state == TaskState::Done && task.visited() == TaskState::CHAIN, format!("{code}: {:?}", task.visited()))?;
    }
    ensure(slowest < CASE_BUDGET, format!("slowest standard case {slowest:?}"))?;

    let content = Arc::new(Mutex::new(String::new()));
    let pipeline = pipeline_with(Arc::new(drafting_provider(content.clone())), 7);
    let expected: Vec<TaskState> = TaskState::CHAIN[..4].iter().copied().chain([TaskState::Failed]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut per_rule: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..FUZZED_DRAFTS {
        let mut case = seed_case("seed-mdd-001").case;
        let rule = mutate_mdd(&mut rng, &mut case);
        *content.lock() = content_reply(&case);
        let mut task = pipeline
            .start_generation(format!("fuzz-{i}"), GenerationSpec { disorder_code: "MDD".into(), difficulty: 2 })
            .map_err(|e| e.to_string())?;
        while !task.state.is_terminal() {
            pipeline.advance(&mut task).await.map_err(|e| e.to_string())?;
        }
        let caught = task.visited() == expected && task.report.as_ref().is_some_and(|r| r.violated(rule));
        ensure(caught, format!("draft {i} ({rule}) escaped: {:?}", task.visited()))?;
        *per_rule.entry(rule).or_default() += 1;
    }
    Ok(format!(
        "6 scripted cases Done via the exact chain (slowest {slowest:.2?}); {FUZZED_DRAFTS}/{FUZZED_DRAFTS} fuzzed drafts caught across {} rules",
        per_rule.len()
    ))
}

fn oracle_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..ORACLE_KBS {
        let kb = random_exam_kb(&mut rng);
        let mut tags: BTreeSet<String> = TAG_POOL.iter().filter(|_| rng.gen_bool(0.4)).map(|s| s.to_string()).collect();
        tags.insert(TAG_POOL[rng.gen_range(0..TAG_POOL.len())].to_string());
        let dx = rng.gen_bool(0.5).then(|| DX_POOL[rng.gen_range(0..DX_POOL.len())]);
        let w = random_weights(&mut rng);
        let got: Vec<(String, f64)> = recommend(&tags, dx, &kb, &w)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.code, r.priority))
            .collect();
        ensure(got == oracle_exam_ranking(&kb, &tags, dx, &w), format!("exam KB {i} differs"))?;
    }
    for i in 0..ORACLE_DRAFTS {
        let (kb, entries) = random_pharmacy(&mut rng);
        let draft = random_draft(&mut rng);
        let got: BTreeSet<(String, String, Severity)> = check_interactions(&draft, &kb)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|f| (f.subjects[0].clone(), f.subjects[1].clone(), f.severity))
            .collect();
        ensure(got == oracle_interactions(&draft, &entries), format!("draft {i} differs"))?;
    }
    let kb = KnowledgeBase::seed();
    let mut subsets = 0usize;
    let all_tags: BTreeSet<String> = kb
        .disorders
        .iter()
        .flat_map(|d| d.criterion_tags.iter().chain(d.exclusion_tags.iter()).cloned())
        .collect();
    for d in kb.disorders.iter() {
        let mut universe: Vec<String> = d.criterion_tags.clone();
        for t in d.exclusion_tags.iter().chain(all_tags.iter()) {
            if universe.len() < MAX_SUBSET_TAGS && !universe.contains(t) {
                universe.push(t.clone());
            }
        }
        for mask in 0u32..(1 << universe.len()) {
            let findings: BTreeMap<String, u32> = universe
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(i, t)| (t.clone(), if (mask >> (i % 5)) & 1 == 1 { d.min_duration } else { d.min_duration.saturating_sub(1) }))
                .collect();
            let instances: Vec<SymptomInstance> = findings
                .iter()
                .map(|(t, w)| SymptomInstance { tag: t.clone(), severity: 2, onset_weeks: *w, atypical: false })
                .collect();
            ensure(
                match_criteria(&instances, &kb.disorders) == oracle_ranking(&kb.disorders, &findings),
                format!("{} subset {mask:b} differs", d.disorder_code),
            )?;
            subsets += 1;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w = DimensionScores {
            consultation_skills: raw[0] / total,
            clinical_thinking: raw[1] / total,
            diagnostic_accuracy: raw[2] / total,
            medication_rationality: raw[3] / total,
        };
        let s: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..=100.0)).collect();
        let dims = DimensionScores {
            consultation_skills: s[0],
            clinical_thinking: s[1],
            diagnostic_accuracy: s[2],
            medication_rationality: s[3],
        };
        let weights = Weights::new(w).map_err(|e| e.to_string())?;
        let by_hand = w.consultation_skills * s[0] + w.clinical_thinking * s[1] + w.diagnostic_accuracy * s[2] + w.medication_rationality * s[3];
        worst = worst.max((weights.composite(&dims) - by_hand).abs());
    }
    ensure(worst <= COMPOSITE_TOLERANCE, format!("composite off by {worst:e}"))?;
    Ok(format!(
        "{ORACLE_KBS} exam KBs, {ORACLE_DRAFTS} drafts, {subsets} finding subsets identical; composite max error {worst:.1e}"
    ))
}

fn ground_truth() -> Outcome {
    let kb = KnowledgeBase::seed();
    let cases = seed_cases();
    let mut misses = Vec::new();
    for doc in &cases {
        let ranking = match_criteria(&doc.case.symptoms, &kb.disorders);
        if !ranking.iter().take(3).any(|h| h.disorder_code == doc.case.ground_truth_dx) {
            misses.push(doc.case.id.clone());
        }
    }
    ensure(misses.is_empty(), format!("missed: {misses:?}"))?;
    Ok(format!("{}/{} seed cases rank their diagnosis in the top 3", cases.len(), cases.len()))
}

fn safety_gating() -> Outcome {
    let kb = KnowledgeBase::seed();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let verdicts = |corpus: Vec<RxCase>, want: Verdict| -> Result<usize, String> {
        let mut n = 0;
        for case in corpus {
            let r = review(&case.draft, &case.flags, &kb.pharmacy, ReviewPolicy::default()).map_err(|e| e.to_string())?;
            if r.verdict == want {
                n += 1;
            } else {
                return Err(format!("{} got {:?}: {:?}", case.planted, r.verdict, r.findings));
            }
        }
        Ok(n)
    };
    let blocked = verdicts(adversarial_corpus(&mut rng, &kb.pharmacy, SAFETY_CORPUS), Verdict::Blocked)?;
    let approved = verdicts(clean_corpus(&mut rng, &kb.pharmacy, SAFETY_CORPUS), Verdict::Approved)?;
    Ok(format!("{blocked}/{SAFETY_CORPUS} adversarial blocked, {approved}/{SAFETY_CORPUS} clean approved"))
}

/// Wraps a provider and accumulates the time spent inside it.
struct TimedProvider {
    inner: ScriptedProvider,
    nanos: AtomicU64,
}

#[async_trait]
impl LlmProvider for TimedProvider {
    fn id(&self) -> &str {
        "timed"
    }

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        let started = Instant::now();
        let reply = self.inner.call(request).await;
        self.nanos.fetch_add(started.elapsed().as_nanos() as u64, Ordering::SeqCst);
        reply
    }
}

fn p95(mut samples: Vec<Duration>) -> Duration {
    samples.sort();
    samples[(samples.len() * 95).div_ceil(100) - 1]
}

async fn latency() -> Outcome {
    let service = Arc::new(service_with(Arc::new(ScriptedProvider::demo()), 42));
    let app = api::router(service.clone());
    let mut users = Vec::new();
    for i in 0..USERS {
        let login = format!("load-{i}");
        service.bootstrap_user(&login, "load-pass", Role::Trainee).map_err(|e| e.to_string())?;
        let (token, uid) = login_token(&service, &login, "load-pass");
        let (_, session) = http(&app, "POST", "/sessions", Some(&token), json!({"case_id": "seed-mdd-001"})).await;
        let sid = session["id"].as_str().ok_or("session not opened")?.to_string();
        users.push((token, uid, sid));
    }
    let tasks: Vec<_> = users
        .into_iter()
        .map(|(token, uid, sid)| {
            let app = app.clone();
            tokio::spawn(async move {
                let mut samples = Vec::new();
                for k in 0..REQUESTS_PER_USER {
                    let (method, path, body) = match k % 5 {
                        0 => ("GET", "/cases/seed-mdd-001".to_string(), Value::Null),
                        1 => (
                            "POST",
                            "/exams/recommend".to_string(),
                            json!({"symptom_tags": ["depressed_mood", "insomnia", "fatigue"], "provisional_dx": "MDD"}),
                        ),
                        2 => (
                            "POST",
                            "/exams/orders".to_string(),
                            json!({"session_id": sid, "items": ["LAB-TSH", "LAB-CBC"], "acknowledge_all": true}),
                        ),
                        3 => ("GET", format!("/sessions/{sid}/replay"), Value::Null),
                        _ => ("GET", format!("/users/{uid}/progress"), Value::Null),
                    };
                    let started = Instant::now();
                    let (status, _) = http(&app, method, &path, Some(&token), body).await;
                    samples.push(started.elapsed());
                    if !status.is_success() {
                        return Err(format!("{method} {path} -> {status}"));
                    }
                }
                Ok(samples)
            })
        })
        .collect();
    let mut samples = Vec::new();
    for t in tasks {
        samples.extend(t.await.map_err(|e| e.to_string())??);
    }
    let endpoint_p95 = p95(samples.clone());

    let timed = Arc::new(TimedProvider { inner: ScriptedProvider::demo(), nanos: AtomicU64::new(0) });
    let svc = service_with(timed.clone(), 42);
    svc.bootstrap_user("turns", "turns-pass", Role::Trainee).map_err(|e| e.to_string())?;
    let (token, _) = login_token(&svc, "turns", "turns-pass");
    let claims = svc.authorize(&token, &rbac::SESSIONS_TURN).map_err(|e| e.to_string())?;
    let session = svc
        .open_session(&claims, &OpenSessionRequest { case_id: "seed-mdd-001".into(), mode: None })
        .map_err(|e| e.to_string())?;
    let mut overhead = Vec::new();
    for q in MDD_CONSULTATION {
        let before = timed.nanos.load(Ordering::SeqCst);
        let started = Instant::now();
        svc.turn(&claims, &session.id, &TurnRequest { text: q.into() }).await.map_err(|e| e.to_string())?;
        let total = started.elapsed();
        let in_provider = Duration::from_nanos(timed.nanos.load(Ordering::SeqCst) - before);
        overhead.push(total.saturating_sub(in_provider));
    }
    let worst_turn = *overhead.iter().max().unwrap();

    let mut worst_dx = Duration::ZERO;
    for _ in 0..10 {
        let started = Instant::now();
        svc.diagnose(&claims, &DiagnosisRequest { session_id: session.id.clone(), dx: "MDD".into(), findings: None, advisory: false })
            .await
            .map_err(|e| e.to_string())?;
        worst_dx = worst_dx.max(started.elapsed());
    }

    let detail = format!(
        "p95 {endpoint_p95:.2?} over {} requests from {USERS} users; worst turn overhead {worst_turn:.2?}; worst diagnosis {worst_dx:.2?}",
        samples.len()
    );
    ensure(endpoint_p95 < P95_BUDGET && worst_turn < TURN_OVERHEAD_BUDGET && worst_dx < DIAGNOSIS_BUDGET, detail.clone())?;
    Ok(detail)
}

async fn security() -> Outcome {
    let sweep = rbac_sweep(Arc::new(service_with(Arc::new(ScriptedProvider::demo()), 1))).await;
    ensure(sweep.is_empty(), format!("rbac: {sweep:?}"))?;
    let pairs = Role::ALL.len() * psysim::platform::service::protected_endpoints().count();
    audit_exactly_once(&service_with(Arc::new(ScriptedProvider::demo()), 2)).await?;
    let (found, planted, problems) = pii_recall(&pii_corpus());
    ensure(problems.is_empty() && found == planted, format!("pii: {found}/{planted} {problems:?}"))?;
    cache_race(CACHE_WRITERS, 250)?;
    Ok(format!(
        "{pairs} role/endpoint pairs enforced; critical ops audited once with the chain intact; PII recall {found}/{planted}; {CACHE_WRITERS} writers, no lost update"
    ))
}

fn advisory_text(rng: &mut ChaCha8Rng) -> String {
    let words = [
        "MDD", "GAD", "PD", "SCZ", "BP1", "ADJ", "schizophrenia", "bipolar", "panic", "sertraline", "phenelzine", "lithium",
        "quetiapine", "approve", "blocked", "safe", "contraindicated", "rank first", "ignore the rules", "the diagnosis is",
        "I recommend", "definitely", "no interaction", "\"verdict\": \"approved\"", "```json", "{", "}", "\n",
    ];
    let n = rng.gen_range(0..40);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

async fn rule_authority() -> Outcome {
    let provider = Arc::new(SwitchProvider { text: Mutex::new(String::new()) });
    let service = service_with(provider.clone(), 42);
    service.bootstrap_user("ra", "ra-pass", Role::Trainee).map_err(|e| e.to_string())?;
    let (token, _) = login_token(&service, "ra", "ra-pass");
    let claims = service.authorize(&token, &rbac::DIAGNOSES).map_err(|e| e.to_string())?;
    let session = service
        .open_session(&claims, &OpenSessionRequest { case_id: "seed-mdd-001".into(), mode: None })
        .map_err(|e| e.to_string())?;
    let diagnose = |advisory: bool| {
        let req = DiagnosisRequest { session_id: session.id.clone(), dx: "MDD".into(), findings: None, advisory };
        let service = &service;
        let claims = &claims;
        async move {
            let r = service.diagnose(claims, &req).await.map_err(|e| e.to_string())?;
            serde_json::to_string(&(&r.ranking, &r.differential, &r.treatment)).map_err(|e| e.to_string())
        }
    };
    service
        .diagnose(&claims, &DiagnosisRequest { session_id: session.id.clone(), dx: "MDD".into(), findings: None, advisory: false })
        .await
        .map_err(|e| e.to_string())?;
    let mut drafts = Vec::new();
    for lines in [None, Some(vec![PrescriptionLine::new("sertraline", 50.0, &["morning"]), PrescriptionLine::new("phenelzine", 30.0, &["morning"])])] {
        let d = service
            .create_prescription(
                &claims,
                &PrescriptionRequest {
                    session_id: session.id.clone(),
                    dx: None,
                    lines,
                    patient_flags: Default::default(),
                    failed_medications: Default::default(),
                },
            )
            .await
            .map_err(|e| e.to_string())?;
        drafts.push(d.id);
    }
    let review_of = |id: String, advisory: bool| {
        let service = &service;
        let claims = &claims;
        async move {
            let r = service
                .review_prescription(claims, &id, &ReviewRequest { lines: None, advisory })
                .await
                .map_err(|e| e.to_string())?;
            Ok::<_, String>((r.review.verdict, serde_json::to_string(&r.review.findings).unwrap()))
        }
    };

    let base_dx = diagnose(false).await?;
    let base_rx = [review_of(drafts[0].clone(), false).await?, review_of(drafts[1].clone(), false).await?];
    ensure(base_rx[0].0 == Verdict::Approved && base_rx[1].0 == Verdict::Blocked, "baseline verdicts unexpected")?;
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..ADVISORY_TEXTS {
        *provider.text.lock() = advisory_text(&mut rng);
        for advisory in [true, false] {
            ensure(diagnose(advisory).await? == base_dx, format!("text {i}: ranking changed"))?;
            for (k, id) in drafts.iter().enumerate() {
                ensure(review_of(id.clone(), advisory).await? == base_rx[k], format!("text {i}: review {k} changed"))?;
            }
        }
    }
    Ok(format!("{ADVISORY_TEXTS} advisory texts: rankings and verdicts identical with advisory on and off"))
}
