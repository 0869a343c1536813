//! Helpers shared by the integration tests: closure-backed providers,
//! random knowledge-base generators and independent reference
//! implementations used as oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::Rng;

use psysim::cases::{seed_cases, CaseDocument};
use psysim::clock::{Clock, StepClock};
use psysim::dialogue::{ContextBudget, DialogueEngine, Lexicon};
use psysim::exams::{ExamItem, ExamKb, PriorityWeights};
use psysim::gateway::{LlmGateway, LlmProvider, ProviderConfig, ProviderRequest, ScriptedProvider, TemplateSet, TransportError};
use psysim::ids::IdGenerator;
use psysim::kb::KnowledgeBase;
use psysim::platform::{AuditLog, DataStore, PlatformConfig, PlatformService, ServiceParts};
use psysim::prescription::{DrugEntry, InteractionEntry, PharmacyKb, PrescriptionDraft, PrescriptionLine, Severity};

type Reply = dyn Fn(&str) -> Result<String, TransportError> + Send + Sync;

/// A provider whose replies come from a closure over the prompt.
pub struct FnProvider {
    reply: Box<Reply>,
}

impl FnProvider {
    pub fn new(f: impl Fn(&str) -> Result<String, TransportError> + Send + Sync + 'static) -> Self {
        Self { reply: Box::new(f) }
    }
}

#[async_trait]
impl LlmProvider for FnProvider {
    fn id(&self) -> &str {
        "fn"
    }

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        (self.reply)(&request.prompt)
    }
}

/// Returns whatever text was last set, regardless of the prompt.
#[derive(Default)]
pub struct SwitchProvider {
    pub text: Mutex<String>,
}

#[async_trait]
impl LlmProvider for SwitchProvider {
    fn id(&self) -> &str {
        "switch"
    }

    async fn call(&self, _request: &ProviderRequest) -> Result<String, TransportError> {
        Ok(self.text.lock().clone())
    }
}

pub fn fast_config() -> ProviderConfig {
    ProviderConfig {
        backoff_base: Duration::from_millis(1),
        ..ProviderConfig::default()
    }
}

pub fn gateway_with(provider: Arc<dyn LlmProvider>) -> Arc<LlmGateway> {
    Arc::new(LlmGateway::new(provider, fast_config()).expect("valid config"))
}

pub fn scripted_gateway() -> Arc<LlmGateway> {
    gateway_with(Arc::new(ScriptedProvider::demo()))
}

pub fn engine_with(gateway: Arc<LlmGateway>) -> DialogueEngine {
    DialogueEngine::new(
        Arc::new(KnowledgeBase::seed()),
        Arc::new(Lexicon::seed()),
        Arc::new(TemplateSet::seed()),
        gateway,
        ContextBudget::default(),
    )
}

pub fn seed_case(id: &str) -> CaseDocument {
    seed_cases().into_iter().find(|d| d.case.id == id).unwrap_or_else(|| panic!("no seed case {id}"))
}

/// An in-memory service on an arbitrary provider, otherwise identical to
/// `PlatformService::scripted`.
pub fn service_with(provider: Arc<dyn LlmProvider>, seed: u64) -> PlatformService {
    let config = PlatformConfig {
        seed,
        ..PlatformConfig::default()
    };
    service_from(config, provider)
}

pub fn service_from(config: PlatformConfig, provider: Arc<dyn LlmProvider>) -> PlatformService {
    let clock: Arc<dyn Clock> = Arc::new(StepClock::new(1_700_000_000_000, 1));
    PlatformService::new(ServiceParts {
        config,
        kb: KnowledgeBase::seed(),
        gateway: gateway_with(provider),
        audit: AuditLog::in_memory(clock.clone()),
        clock,
        ids: IdGenerator::new(),
        store: DataStore::in_memory(),
        jwt_secret: b"integration-test-key".to_vec(),
    })
    .expect("service builds")
}

// ---- random knowledge bases ------------------------------------------------

pub const TAG_POOL: [&str; 10] = ["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"];
pub const DX_POOL: [&str; 4] = ["D0", "D1", "D2", "D3"];

fn subset<R: Rng>(rng: &mut R, pool: &[&str], p: f64) -> BTreeSet<String> {
    pool.iter().filter(|_| rng.gen_bool(p)).map(|s| s.to_string()).collect()
}

/// Costs and turnarounds come from small integer grids so that ties occur.
pub fn random_exam_kb<R: Rng>(rng: &mut R) -> ExamKb {
    let n = rng.gen_range(1..=12);
    let items = (0..n)
        .map(|i| ExamItem {
            code: format!("EX{i:02}"),
            name: format!("exam {i}"),
            cost: f64::from(rng.gen_range(0..6u32)) * 50.0,
            turnaround: f64::from(rng.gen_range(1..5u32)) * 12.0,
            relevant_symptom_tags: subset(rng, &TAG_POOL, 0.3),
            relevant_disorders: subset(rng, &DX_POOL, 0.3),
            contraindication_flags: BTreeSet::new(),
            preparation: String::new(),
            precautions: String::new(),
        })
        .collect();
    ExamKb::new(items).expect("generated items are valid")
}

pub fn random_weights<R: Rng>(rng: &mut R) -> PriorityWeights {
    let raw: [u32; 3] = [rng.gen_range(0..5), rng.gen_range(0..5), rng.gen_range(1..5)];
    let sum = f64::from(raw.iter().sum::<u32>());
    PriorityWeights {
        necessity: f64::from(raw[0]) / sum,
        cost_effectiveness: f64::from(raw[1]) / sum,
        timeliness: f64::from(raw[2]) / sum,
    }
}

/// Priority of one item, recomputed from the definition.
pub fn oracle_priority(
    item: &ExamItem,
    tags: &BTreeSet<String>,
    dx: Option<&str>,
    items: &[&ExamItem],
    w: &PriorityWeights,
) -> f64 {
    let mut relevance: Vec<&String> = item.relevant_symptom_tags.iter().collect();
    for d in &item.relevant_disorders {
        if !relevance.contains(&d) {
            relevance.push(d);
        }
    }
    let necessity = if relevance.is_empty() {
        0.0
    } else {
        let hit = relevance.iter().filter(|r| tags.contains(r.as_str()) || dx == Some(r.as_str())).count();
        hit as f64 / relevance.len() as f64
    };
    let max_cost = items.iter().map(|i| i.cost).fold(0.0, f64::max);
    let max_turn = items.iter().map(|i| i.turnaround).fold(0.0, f64::max);
    let ce = if max_cost > 0.0 { 1.0 - item.cost / max_cost } else { 1.0 };
    let tl = 1.0 - item.turnaround / max_turn;
    w.necessity * necessity + w.cost_effectiveness * ce + w.timeliness * tl
}

/// Brute-force ranking: repeatedly extract the best remaining item.
pub fn oracle_exam_ranking(kb: &ExamKb, tags: &BTreeSet<String>, dx: Option<&str>, w: &PriorityWeights) -> Vec<(String, f64)> {
    let items: Vec<&ExamItem> = kb.iter().collect();
    let mut scored: Vec<(String, f64)> =
        items.iter().map(|i| (i.code.clone(), oracle_priority(i, tags, dx, &items, w))).collect();
    let mut out = Vec::new();
    while !scored.is_empty() {
        let mut best = 0;
        for i in 1..scored.len() {
            let (c, p) = &scored[i];
            let (bc, bp) = &scored[best];
            if p > bp || (p == bp && c < bc) {
                best = i;
            }
        }
        out.push(scored.remove(best));
    }
    out
}

pub const DRUG_POOL: [&str; 8] = ["da", "db", "dc", "dd", "de", "df", "dg", "dh"];
const SEVERITIES: [Severity; 4] = [Severity::Info, Severity::Caution, Severity::Major, Severity::Contraindicated];

pub fn random_pharmacy<R: Rng>(rng: &mut R) -> (PharmacyKb, Vec<InteractionEntry>) {
    let drugs: Vec<DrugEntry> = DRUG_POOL
        .iter()
        .map(|id| DrugEntry {
            id: id.to_string(),
            name: id.to_uppercase(),
            drug_class: "test".into(),
            dose_min: 10.0,
            dose_max: 100.0,
            unit: "mg".into(),
            schedule_constraint: None,
            contraindication_flags: BTreeSet::new(),
            alternatives: Vec::new(),
            adverse_warnings: Vec::new(),
        })
        .collect();
    let mut interactions = Vec::new();
    for (i, a) in DRUG_POOL.iter().enumerate() {
        for b in &DRUG_POOL[i + 1..] {
            if rng.gen_bool(0.3) {
                let (x, y) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                interactions.push(InteractionEntry {
                    drug_a: x.to_string(),
                    drug_b: y.to_string(),
                    severity: *SEVERITIES.choose(rng).expect("non-empty"),
                    mechanism: format!("{x}+{y}"),
                });
            }
        }
    }
    let kb = PharmacyKb::new(drugs, interactions.clone(), Vec::new()).expect("valid pharmacy");
    (kb, interactions)
}

/// Lines may repeat a drug.
pub fn random_draft<R: Rng>(rng: &mut R) -> PrescriptionDraft {
    let n = rng.gen_range(1..=6);
    let lines = (0..n)
        .map(|_| PrescriptionLine::new(*DRUG_POOL.choose(rng).expect("non-empty"), 20.0, &["morning"]))
        .collect();
    PrescriptionDraft::new("rx-fuzz", "case-fuzz", "D0", lines)
}

/// Interaction findings by scanning every ordered line pair against the raw
/// entry list.
pub fn oracle_interactions(draft: &PrescriptionDraft, entries: &[InteractionEntry]) -> BTreeSet<(String, String, Severity)> {
    let mut out = BTreeSet::new();
    for a in &draft.lines {
        for b in &draft.lines {
            if a.drug_id == b.drug_id {
                continue;
            }
            for e in entries {
                if e.drug_a == a.drug_id && e.drug_b == b.drug_id {
                    let mut pair = [a.drug_id.clone(), b.drug_id.clone()];
                    pair.sort();
                    let [x, y] = pair;
                    out.insert((x, y, e.severity));
                }
            }
        }
    }
    out
}

pub fn finding_map(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
    pairs.iter().map(|(t, w)| (t.to_string(), *w)).collect()
}

// ---- case drafts -------------------------------------------------------------

use psysim::cases::{CasePipeline, CaseRecord, RuleSet, SymptomInstance};

pub fn pipeline_with(provider: Arc<dyn LlmProvider>, seed: u64) -> CasePipeline {
    CasePipeline::new(
        Arc::new(KnowledgeBase::seed()),
        Arc::new(RuleSet::seed()),
        Arc::new(TemplateSet::seed()),
        gateway_with(provider),
        Arc::new(StepClock::new(0, 1)),
        seed,
    )
}

/// The content-stage reply that fills a draft with exactly `case`'s fields.
pub fn content_reply(case: &CaseRecord) -> String {
    let body = serde_json::json!({
        "demographics": case.demographics,
        "chief_complaint": case.chief_complaint,
        "history": case.history,
        "mental_status": case.mental_status,
        "symptoms": case.symptoms,
        "required_topics": case.required_topics,
        "reference_exams": case.reference_exams,
        "reference_rx": case.reference_rx,
    });
    format!("Draft:\n```case\n{body}\n```")
}

/// Answers each generation layer; the content layer returns `content`.
pub fn drafting_provider(content: Arc<Mutex<String>>) -> FnProvider {
    FnProvider::new(move |prompt| {
        if prompt.starts_with("[CASE FRAMEWORK]") {
            Ok("Framework: follow the listed symptoms.".into())
        } else if prompt.starts_with("[CASE CONTENT]") {
            Ok(content.lock().clone())
        } else if prompt.starts_with("[CASE STYLE]") {
            Ok("no style block".into())
        } else {
            Err(TransportError(format!("unexpected prompt: {}", prompt.lines().next().unwrap_or(""))))
        }
    })
}

fn symptom(tag: &str, severity: u8, onset_weeks: u32) -> SymptomInstance {
    SymptomInstance {
        tag: tag.into(),
        severity,
        onset_weeks,
        atypical: false,
    }
}

const MOOD_TAGS: [&str; 5] = ["depressed_mood", "anhedonia", "worthlessness", "elevated_mood", "irritability"];

/// One deliberate violation of a blocking seed rule, applied to an MDD draft.
/// Returns the id of the rule the mutation breaks.
pub fn mutate_mdd<R: Rng>(rng: &mut R, case: &mut CaseRecord) -> &'static str {
    match rng.gen_range(0..20) {
        0 => {
            case.chief_complaint = " ".repeat(rng.gen_range(0..3));
            "S-001"
        }
        1 => {
            case.history.present_illness.clear();
            "S-002"
        }
        2 => {
            case.mental_status = "\n".into();
            "S-006"
        }
        3 => {
            case.symptoms.clear();
            "S-007"
        }
        4 => {
            case.required_topics.clear();
            "S-008"
        }
        5 => {
            case.demographics.age = if rng.gen_bool(0.5) { rng.gen_range(-40..12) } else { rng.gen_range(101..400) };
            "S-009"
        }
        6 => {
            let i = rng.gen_range(0..=case.symptoms.len());
            case.symptoms.insert(i, symptom(&format!("made_up_{}", rng.gen::<u16>()), 2, 4));
            "T-001"
        }
        7 => {
            case.reference_exams.push(format!("LAB-X{}", rng.gen::<u16>()));
            "T-004"
        }
        8 => {
            case.reference_rx.push(format!("drug_{}", rng.gen::<u16>()));
            "T-005"
        }
        9 => {
            case.required_topics.push(format!("topic_{}", rng.gen::<u16>()));
            "T-006"
        }
        10 => {
            let i = rng.gen_range(0..case.symptoms.len());
            case.symptoms[i].severity = rng.gen_range(4..=u8::MAX);
            "T-007"
        }
        11 => {
            let slot = ["{patient_name}", "{ age }", "{Occupation_2}"].choose(rng).expect("non-empty");
            case.history.personal = format!("{} {slot}", case.history.personal);
            "T-010"
        }
        12 => {
            case.demographics.sex = ["", "F", "woman", "unknown"].choose(rng).expect("non-empty").to_string();
            "T-011"
        }
        13 => {
            let keep = rng.gen_range(0..5);
            case.symptoms.truncate(keep);
            "L-002"
        }
        14 => {
            for s in &mut case.symptoms {
                s.onset_weeks = rng.gen_range(0..2);
            }
            "L-003"
        }
        15 => {
            case.symptoms.push(symptom("manic_episode", rng.gen_range(1..=3), 3));
            "L-004"
        }
        16 => {
            if !case.has_symptom("suicidal_ideation") {
                case.symptoms.push(symptom("suicidal_ideation", 2, 3));
            }
            case.required_topics.retain(|t| t != "suicidality");
            "L-008"
        }
        17 => {
            let i = rng.gen_range(0..case.symptoms.len());
            case.symptoms[i].onset_weeks = (case.demographics.age.max(0) as u32) * 52 + rng.gen_range(1..500);
            "L-009"
        }
        18 => {
            case.symptoms.retain(|s| !MOOD_TAGS.contains(&s.tag.as_str()));
            "L-010"
        }
        _ => {
            let i = rng.gen_range(0..case.symptoms.len());
            let dup = case.symptoms[i].clone();
            case.symptoms.push(dup);
            "L-011"
        }
    }
}

// ---- diagnosis oracle ------------------------------------------------------

use psysim::diagnosis::{DiagnosisHypothesis, DisorderCriteria, DisorderKb};

/// One hypothesis recomputed from the criteria definition.
pub fn oracle_hypothesis(d: &DisorderCriteria, findings: &BTreeMap<String, u32>) -> DiagnosisHypothesis {
    let matched: Vec<String> = d.criterion_tags.iter().filter(|t| findings.contains_key(*t)).cloned().collect();
    let missing: Vec<String> = d.criterion_tags.iter().filter(|t| !findings.contains_key(*t)).cloned().collect();
    let mut longest: Option<u32> = None;
    for t in &matched {
        let w = findings[t];
        longest = Some(longest.map_or(w, |l| l.max(w)));
    }
    let duration_met = matches!(longest, Some(w) if w >= d.min_duration);
    let exclusions: Vec<String> = d.exclusion_tags.iter().filter(|t| findings.contains_key(*t)).cloned().collect();
    DiagnosisHypothesis {
        disorder_code: d.disorder_code.clone(),
        coverage: if d.criterion_tags.is_empty() { 0.0 } else { matched.len() as f64 / d.criterion_tags.len() as f64 },
        eligible: matched.len() >= d.min_required && duration_met && exclusions.is_empty(),
        matched_tags: matched,
        missing_tags: missing,
        duration_met,
        exclusions_present: exclusions,
        prevalence_weight: d.prevalence_weight,
    }
}

/// Ranking by pairwise comparison: eligible first, then coverage compared
/// as exact fractions, then prevalence, then code.
pub fn oracle_ranking(kb: &DisorderKb, findings: &BTreeMap<String, u32>) -> Vec<DiagnosisHypothesis> {
    let mut hs: Vec<(DiagnosisHypothesis, usize, usize)> = kb
        .iter()
        .map(|d| (oracle_hypothesis(d, findings), findings_matched(d, findings), d.criterion_tags.len()))
        .collect();
    let better = |a: &(DiagnosisHypothesis, usize, usize), b: &(DiagnosisHypothesis, usize, usize)| -> bool {
        if a.0.eligible != b.0.eligible {
            return a.0.eligible;
        }
        let (l, r) = (a.1 * b.2, b.1 * a.2);
        if l != r {
            return l > r;
        }
        if a.0.prevalence_weight != b.0.prevalence_weight {
            return a.0.prevalence_weight > b.0.prevalence_weight;
        }
        a.0.disorder_code < b.0.disorder_code
    };
    // insertion sort, independent of the library's sort
    for i in 1..hs.len() {
        let mut j = i;
        while j > 0 && better(&hs[j], &hs[j - 1]) {
            hs.swap(j, j - 1);
            j -= 1;
        }
    }
    hs.into_iter().map(|(h, _, _)| h).collect()
}

fn findings_matched(d: &DisorderCriteria, findings: &BTreeMap<String, u32>) -> usize {
    d.criterion_tags.iter().filter(|t| findings.contains_key(*t)).count()
}

// ---- prescription corpora --------------------------------------------------

use psysim::prescription::default_slots;

#[derive(Debug, Clone)]
pub struct RxCase {
    pub draft: PrescriptionDraft,
    pub flags: BTreeSet<String>,
    pub planted: String,
}

fn line(kb: &PharmacyKb, id: &str, dose: f64) -> PrescriptionLine {
    let drug = kb.drug(id).expect("seed drug");
    PrescriptionLine {
        drug_id: id.into(),
        dose,
        slots: default_slots(drug.schedule_constraint.as_deref()),
    }
}

fn mid_dose<R: Rng>(rng: &mut R, kb: &PharmacyKb, id: &str) -> f64 {
    let d = kb.drug(id).expect("seed drug");
    let steps = rng.gen_range(0..=4);
    d.dose_min + (d.dose_max - d.dose_min) * f64::from(steps) / 4.0
}

/// Prescriptions each carrying one planted blocking problem: a major or
/// contraindicated pair, a dose outside the range, a morning-only and a
/// bedtime-only drug sharing a slot, or a drug contraindicated by a patient
/// flag.
pub fn adversarial_corpus<R: Rng>(rng: &mut R, kb: &PharmacyKb, n: usize) -> Vec<RxCase> {
    let pairs: Vec<(String, String)> = kb
        .interactions()
        .filter(|e| e.severity >= Severity::Major)
        .map(|e| (e.drug_a.clone(), e.drug_b.clone()))
        .collect();
    let drugs: Vec<String> = kb.drugs().map(|d| d.id.clone()).collect();
    let with = |c: &str| -> Vec<String> {
        kb.drugs().filter(|d| d.schedule_constraint.as_deref() == Some(c)).map(|d| d.id.clone()).collect()
    };
    let (mornings, bedtimes) = (with("morning_only"), with("bedtime_only"));
    let flagged: Vec<String> = kb.drugs().filter(|d| !d.contraindication_flags.is_empty()).map(|d| d.id.clone()).collect();
    (0..n)
        .map(|i| {
            let mut flags = BTreeSet::new();
            let (lines, planted) = match i % 4 {
                0 => {
                    let (a, b) = pairs.choose(rng).expect("seed pairs");
                    let a_dose = mid_dose(rng, kb, a);
                    let b_dose = mid_dose(rng, kb, b);
                    (vec![line(kb, a, a_dose), line(kb, b, b_dose)], format!("pair {a}+{b}"))
                }
                1 => {
                    let id = drugs.choose(rng).expect("drugs");
                    let d = kb.drug(id).expect("seed drug");
                    let dose = if rng.gen_bool(0.5) { d.dose_min * 0.5 } else { d.dose_max * 1.5 };
                    (vec![line(kb, id, dose)], format!("dose {id} {dose}"))
                }
                2 => {
                    let a = mornings.choose(rng).expect("morning-only drugs");
                    let b = bedtimes.choose(rng).expect("bedtime-only drugs");
                    let slot = ["morning", "bedtime"].choose(rng).expect("slots");
                    let mut la = line(kb, a, mid_dose(rng, kb, a));
                    let mut lb = line(kb, b, mid_dose(rng, kb, b));
                    la.slots = vec![slot.to_string()];
                    lb.slots = vec![slot.to_string()];
                    (vec![la, lb], format!("timing {a}/{b} at {slot}"))
                }
                _ => {
                    let id = flagged.choose(rng).expect("flagged drugs");
                    let d = kb.drug(id).expect("seed drug");
                    let flag = d.contraindication_flags.iter().collect::<Vec<_>>().choose(rng).expect("flags").to_string();
                    flags.insert(flag.clone());
                    (vec![line(kb, id, mid_dose(rng, kb, id))], format!("flag {id}/{flag}"))
                }
            };
            RxCase {
                draft: PrescriptionDraft::new(format!("rx-adv-{i:03}"), "case", "MDD", lines),
                flags,
                planted,
            }
        })
        .collect()
}

/// Prescriptions that are safe by construction: in-range doses, default
/// slots for each schedule constraint, no pair at major or above and no
/// patient flag hitting a chosen drug.
pub fn clean_corpus<R: Rng>(rng: &mut R, kb: &PharmacyKb, n: usize) -> Vec<RxCase> {
    let drugs: Vec<String> = kb.drugs().map(|d| d.id.clone()).collect();
    let all_flags: BTreeSet<String> = kb.drugs().flat_map(|d| d.contraindication_flags.iter().cloned()).collect();
    let mut out = Vec::new();
    while out.len() < n {
        let k = rng.gen_range(1..=3);
        let picked: Vec<String> = drugs.choose_multiple(rng, k).cloned().collect();
        let unsafe_pair = picked.iter().enumerate().any(|(i, a)| {
            picked[i + 1..]
                .iter()
                .any(|b| kb.interaction(a, b).is_some_and(|e| e.severity >= Severity::Major))
        });
        if unsafe_pair {
            continue;
        }
        let lines: Vec<PrescriptionLine> = picked.iter().map(|id| line(kb, id, mid_dose(rng, kb, id))).collect();
        let used: BTreeSet<&String> =
            picked.iter().flat_map(|id| kb.drug(id).expect("seed drug").contraindication_flags.iter()).collect();
        let flags: BTreeSet<String> =
            all_flags.iter().filter(|f| !used.contains(f) && rng.gen_bool(0.2)).cloned().collect();
        out.push(RxCase {
            draft: PrescriptionDraft::new(format!("rx-clean-{:03}", out.len()), "case", "MDD", lines),
            flags,
            planted: "none".into(),
        });
    }
    out
}

// ---- platform checks -------------------------------------------------------

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use psysim::platform::rbac::{Decision, Endpoint, PermissionMatrix};
use psysim::platform::service::{protected_endpoints, LoginRequest};
use psysim::platform::walkthrough::{self, MDD_CONSULTATION};
use psysim::platform::{anonymize, api, AuditAction, Role, VersionedCache};
use serde_json::Value;
use tower::ServiceExt;

pub async fn http(app: &axum::Router, method: &str, path: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::builder()
        .method(method)
        .uri(format!("{}{path}", api::API_PREFIX))
        .header("content-type", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

pub fn login_token(service: &PlatformService, login: &str, credential: &str) -> (String, String) {
    let t = service
        .login(&LoginRequest {
            login: login.into(),
            credential: credential.into(),
            second_factor: None,
        })
        .expect("login");
    (t.token, t.user_id)
}

/// Concrete path for a route pattern. Progress is requested for the caller's
/// own id so that ownership checks do not mask the role decision.
fn concrete(e: &Endpoint, user_id: &str) -> String {
    if e.path.starts_with("/users/") {
        return e.path.replace("{id}", user_id);
    }
    e.path.replace("{id}", "missing-1").replace("{session}", "missing-1")
}

/// Every role × protected endpoint over HTTP, plus every endpoint without a
/// token. Returns the mismatches; empty means the matrix is enforced exactly.
/// Each denial must add exactly one access-denied audit record.
pub async fn rbac_sweep(service: Arc<PlatformService>) -> Vec<String> {
    let matrix = PermissionMatrix::seeded();
    let app = api::router(service.clone());
    let mut bad = Vec::new();
    for role in Role::ALL {
        let login = format!("sweep-{}", role.as_str());
        service.bootstrap_user(&login, "sweep-pass", role).unwrap();
        let (token, uid) = login_token(&service, &login, "sweep-pass");
        for e in protected_endpoints() {
            let denied_before = service.audit_log().count(AuditAction::AccessDenied);
            let (status, body) = http(&app, e.method, &concrete(e, &uid), Some(&token), Value::Null).await;
            let denied = service.audit_log().count(AuditAction::AccessDenied) - denied_before;
            let expect = matrix.authorize(role.as_str(), e);
            let ok = match expect {
                Decision::Deny => status == StatusCode::FORBIDDEN && denied == 1,
                Decision::Allow => {
                    status != StatusCode::FORBIDDEN && status != StatusCode::UNAUTHORIZED && denied == 0
                }
            };
            if !ok {
                bad.push(format!("{} {} -> {status} {} (audited {denied})", role.as_str(), e.key(), body["error"]["code"]));
            }
        }
    }
    for e in protected_endpoints() {
        let (status, _) = http(&app, e.method, &concrete(e, "u"), None, Value::Null).await;
        if status != StatusCode::UNAUTHORIZED {
            bad.push(format!("anonymous {} -> {status}", e.key()));
        }
        let (status, _) = http(&app, e.method, &concrete(e, "u"), Some("not.a.token"), Value::Null).await;
        if status != StatusCode::UNAUTHORIZED {
            bad.push(format!("forged {} -> {status}", e.key()));
        }
    }
    bad
}

/// Runs the full loop once and checks that each critical action was audited
/// exactly as often as it was performed, and that the chain verifies.
pub async fn audit_exactly_once(service: &PlatformService) -> Result<(), String> {
    let before: BTreeMap<AuditAction, usize> =
        AuditAction::CRITICAL.iter().map(|a| (*a, service.audit_log().count(*a))).collect();
    walkthrough::run(service, "MDD", &MDD_CONSULTATION).await.map_err(|e| e.to_string())?;
    let expected = [
        (AuditAction::UserCreate, 2),
        (AuditAction::Login, 2),
        (AuditAction::CaseGenerate, 1),
        (AuditAction::CaseApprove, 1),
        (AuditAction::PrescriptionReview, 1),
        (AuditAction::EvaluationWrite, 1),
        (AuditAction::AccessDenied, 0),
    ];
    for (action, n) in expected {
        let got = service.audit_log().count(action) - before[&action];
        if got != n {
            return Err(format!("{action:?}: {got} records for {n} operations"));
        }
    }
    service.audit_log().verify().map_err(|e| e.to_string())
}

#[derive(serde::Deserialize)]
pub struct PiiEntry {
    pub text: String,
    pub roster: Vec<String>,
    pub pii: Vec<String>,
}

#[derive(serde::Deserialize)]
pub struct PiiCorpus {
    pub identifying: Vec<PiiEntry>,
    pub clinical: Vec<String>,
}

pub fn pii_corpus() -> PiiCorpus {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/pii_corpus.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// (identifiers found, identifiers planted, leaks and clinical damage).
pub fn pii_recall(corpus: &PiiCorpus) -> (usize, usize, Vec<String>) {
    let (mut found, mut planted, mut problems) = (0, 0, Vec::new());
    for e in &corpus.identifying {
        let out = anonymize(&e.text, &e.roster);
        for p in &e.pii {
            planted += 1;
            if out.contains(p.as_str()) {
                problems.push(format!("leaked {p:?} in {out:?}"));
            } else {
                found += 1;
            }
        }
    }
    for text in &corpus.clinical {
        let out = anonymize(text, &[] as &[&str]);
        if &out != text {
            problems.push(format!("clinical text altered: {out:?}"));
        }
    }
    (found, planted, problems)
}

/// `writers` threads each apply `per_writer` read-modify-write increments to
/// one key. Returns an error on a lost update or a non-monotonic version.
pub fn cache_race(writers: usize, per_writer: usize) -> Result<(), String> {
    let cache: Arc<VersionedCache<u64>> = Arc::new(VersionedCache::new());
    let handles: Vec<_> = (0..writers)
        .map(|_| {
            let cache = cache.clone();
            std::thread::spawn(move || {
                (0..per_writer)
                    .map(|_| cache.update("k", |v| v.copied().unwrap_or(0) + 1))
                    .collect::<Vec<u64>>()
            })
        })
        .collect();
    let mut all = BTreeSet::new();
    for h in handles {
        let versions = h.join().map_err(|_| "writer panicked".to_string())?;
        if !versions.windows(2).all(|w| w[0] < w[1]) {
            return Err("versions seen by one writer are not increasing".into());
        }
        for v in versions {
            if !all.insert(v) {
                return Err(format!("version {v} issued twice"));
            }
        }
    }
    let total = (writers * per_writer) as u64;
    let entry = cache.get("k").ok_or("key missing")?;
    if entry.value != total || entry.version != total || all != (1..=total).collect() {
        return Err(format!("value {} version {} after {total} updates", entry.value, entry.version));
    }
    Ok(())
}
