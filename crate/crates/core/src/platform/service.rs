//! The application layer: every API operation as a typed method with
//! access control, ownership checks, audit and persistence applied.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use super::anonymize::{anonymize_with, Roster};
use super::audit::{AuditAction, AuditError, AuditLog, AuditRecord};
use super::auth::{AuthError, AuthService, AuthToken, Claims, Role, UserAccount};
use super::cache::{VersionConflict, VersionedCache};
use super::config::{PlatformConfig, ProviderKind};
use super::rbac::{self, Endpoint, PermissionMatrix};
use super::store::{DataStore, RecordKind, StoreError};
use crate::cases::{
    seed_cases, task_seed, CaseDocument, CasePipeline, CaseRecord, GenerationSpec, GenerationTask, PipelineError,
    PredicateRegistry, RuleSet, SymptomInstance, TaskCoordinator, TaskState,
};
use crate::clock::{Clock, StepClock, SystemClock};
use crate::diagnosis::{
    differential, match_criteria, merge_llm_suggestion, recommend_treatment, DiagnosisError, DiagnosisHypothesis,
    DifferentialReport, LlmMention, TreatmentRecommendation,
};
use crate::dialogue::{
    ContextBudget, DialogueEngine, DialogueError, DialogueSession, Lexicon, Replay, SessionMode, SessionStatus, Turn,
};
use crate::evaluation::{
    elaborate, evaluate_session, track_progress, Dimension, EvaluationError, EvaluationReport, FeedbackTemplates,
    ProgressPoint, ProgressProfile, SessionArtifacts, TemplateError, Weights,
};
use crate::exams::{self, ExamError, ExamOrder, ExamRecommendation, OrderStatus, PriorityWeights};
use crate::gateway::{
    params, render_prompt, GatewayError, HttpProvider, LlmGateway, LlmProvider, PromptError, ScriptedProvider,
    TemplateSet,
};
use crate::ids::IdGenerator;
use crate::kb::{read_data_file, seed, KbError, KnowledgeBase};
use crate::prescription::{
    attach_advisory, propose, review, PatientProfile, PrescriptionDraft, PrescriptionError, PrescriptionLine,
    PrescriptionReview, ReviewPolicy,
};

/// An operation failure with its HTTP status and a stable error code.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{code}: {message}")]
pub struct ServiceError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(404, "NotFound", what)
    }

    pub fn forbidden(what: impl Into<String>) -> Self {
        Self::new(403, "Forbidden", what)
    }

    pub fn bad_request(what: impl Into<String>) -> Self {
        Self::new(400, "BadRequest", what)
    }
}

impl From<AuthError> for ServiceError {
    fn from(e: AuthError) -> Self {
        let (status, code) = match &e {
            AuthError::AuthFailed => (401, "AuthFailed"),
            AuthError::AccountLocked(_) => (423, "AccountLocked"),
            AuthError::TokenExpired => (401, "TokenExpired"),
            AuthError::TokenInvalid => (401, "TokenInvalid"),
            AuthError::DuplicateLogin(_) => (409, "DuplicateLogin"),
            AuthError::InvalidAccount(_) => (400, "InvalidAccount"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<AuditError> for ServiceError {
    fn from(e: AuditError) -> Self {
        Self::new(503, "AuditStoreUnavailable", e.to_string())
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { .. } => Self::new(404, "NotFound", e.to_string()),
            StoreError::SchemaViolation { .. } => Self::new(500, "SchemaViolation", e.to_string()),
            _ => Self::new(500, "StorageError", e.to_string()),
        }
    }
}

impl From<VersionConflict> for ServiceError {
    fn from(e: VersionConflict) -> Self {
        Self::new(409, "VersionConflict", e.to_string())
    }
}

impl From<GatewayError> for ServiceError {
    fn from(e: GatewayError) -> Self {
        let (status, code) = match &e {
            GatewayError::Timeout { .. } => (504, "Timeout"),
            GatewayError::ProviderUnavailable { .. } => (502, "ProviderUnavailable"),
            GatewayError::BudgetExceeded { .. } => (502, "BudgetExceeded"),
            _ => (500, "GatewayError"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<PromptError> for ServiceError {
    fn from(e: PromptError) -> Self {
        Self::new(500, "PromptError", e.to_string())
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        let (status, code) = match &e {
            PipelineError::UnknownDisorder(_) => (400, "UnknownDisorder"),
            PipelineError::InvalidDifficulty(_) => (400, "InvalidDifficulty"),
            PipelineError::Terminal { .. } => (409, "Terminal"),
            PipelineError::Stalled { .. } => (502, "PipelineStalled"),
            PipelineError::NotFound(_) => (404, "NotFound"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<DialogueError> for ServiceError {
    fn from(e: DialogueError) -> Self {
        let (status, code) = match &e {
            DialogueError::EmptyUtterance => (400, "EmptyUtterance"),
            DialogueError::SessionClosed(_) => (409, "SessionClosed"),
            DialogueError::TurnOrderViolation { .. } => (409, "TurnOrderViolation"),
            DialogueError::UnknownCase(_) => (404, "UnknownCase"),
            DialogueError::CaseNotApproved(_) => (409, "CaseNotApproved"),
            DialogueError::UnknownSession(_) => (404, "UnknownSession"),
            DialogueError::Gateway(g) => return g.clone().into(),
            DialogueError::Prompt(_) => (500, "PromptError"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ExamError> for ServiceError {
    fn from(e: ExamError) -> Self {
        let (status, code) = match &e {
            ExamError::InsufficientFindings => (422, "InsufficientFindings"),
            ExamError::UnknownItem(_) => (400, "UnknownItem"),
            ExamError::UnacknowledgedAlerts(_) => (409, "UnacknowledgedAlerts"),
            ExamError::ParseError { .. } => (400, "ParseError"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<DiagnosisError> for ServiceError {
    fn from(e: DiagnosisError) -> Self {
        let code = match &e {
            DiagnosisError::UnknownDisorder(_) => "UnknownDisorder",
            DiagnosisError::NoGuideline(_) => "NoGuideline",
        };
        Self::new(400, code, e.to_string())
    }
}

impl From<PrescriptionError> for ServiceError {
    fn from(e: PrescriptionError) -> Self {
        let code = match &e {
            PrescriptionError::UnknownDrug(_) => "UnknownDrug",
            PrescriptionError::UnknownDisorder(_) => "UnknownDisorder",
            PrescriptionError::NoGuideline(_) => "NoGuideline",
            PrescriptionError::InvalidDraft(_) => "InvalidDraft",
        };
        Self::new(400, code, e.to_string())
    }
}

impl From<EvaluationError> for ServiceError {
    fn from(e: EvaluationError) -> Self {
        let (status, code) = match &e {
            EvaluationError::SessionNotClosed(_) => (409, "SessionNotClosed"),
            EvaluationError::MissingDiagnosis(_) => (422, "MissingDiagnosis"),
            EvaluationError::InvalidWeights(_) => (400, "InvalidWeights"),
            EvaluationError::Template(_) => (500, "TemplateError"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<TemplateError> for ServiceError {
    fn from(e: TemplateError) -> Self {
        Self::new(500, "TemplateError", e.to_string())
    }
}

impl From<KbError> for ServiceError {
    fn from(e: KbError) -> Self {
        Self::new(500, "KbError", e.to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct LoginRequest {
    pub login: String,
    pub credential: String,
    #[serde(default)]
    pub second_factor: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateUserRequest {
    pub login: String,
    pub credential: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserView {
    pub id: String,
    pub login: String,
    pub role: Role,
}

impl From<&UserAccount> for UserView {
    fn from(u: &UserAccount) -> Self {
        Self {
            id: u.id.clone(),
            login: u.login.clone(),
            role: u.role,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct OpenSessionRequest {
    pub case_id: String,
    #[serde(default)]
    pub mode: Option<SessionMode>,
}

/// What a trainee sees of a freshly opened session. Hidden patient state
/// stays on the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub case_id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub summary: String,
    pub focus: Option<Dimension>,
    pub notices: Vec<String>,
}

impl From<&DialogueSession> for SessionView {
    fn from(s: &DialogueSession) -> Self {
        Self {
            id: s.id.clone(),
            case_id: s.case_id.clone(),
            mode: s.mode,
            status: s.status,
            summary: s.summary.clone(),
            focus: s.focus,
            notices: s.notices.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct TurnRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResponse {
    pub doctor: Turn,
    pub patient: Turn,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct RecommendRequest {
    #[serde(default)]
    pub symptom_tags: BTreeSet<String>,
    #[serde(default)]
    pub provisional_dx: Option<String>,
    #[serde(default)]
    pub weights: Option<PriorityWeights>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AlertAck {
    pub item: String,
    pub flag: String,
}

/// An order is confirmed in the same call once every alert it raises is
/// acknowledged; otherwise it comes back as a draft listing the alerts.
#[derive(Debug, Clone, Deserialize)]
pub struct OrderRequest {
    pub session_id: String,
    pub items: Vec<String>,
    #[serde(default)]
    pub patient_flags: BTreeSet<String>,
    #[serde(default)]
    pub acknowledge: Vec<AlertAck>,
    #[serde(default)]
    pub acknowledge_all: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
pub struct DiagnosisRequest {
    pub session_id: String,
    pub dx: String,
    /// Findings to rank; the case's own symptom set when absent.
    #[serde(default)]
    pub findings: Option<Vec<SymptomInstance>>,
    #[serde(default = "yes")]
    pub advisory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisRecord {
    pub id: String,
    pub session_id: String,
    pub entered: String,
    pub findings: Vec<SymptomInstance>,
    pub ranking: Vec<DiagnosisHypothesis>,
    pub differential: DifferentialReport,
    pub treatment: Option<TreatmentRecommendation>,
    pub advisory: Option<String>,
    pub mentions: Vec<LlmMention>,
    pub agreement: bool,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PrescriptionRequest {
    pub session_id: String,
    /// Defaults to the diagnosis entered for the session.
    #[serde(default)]
    pub dx: Option<String>,
    /// Explicit lines; a guideline regimen is proposed when absent.
    #[serde(default)]
    pub lines: Option<Vec<PrescriptionLine>>,
    #[serde(default)]
    pub patient_flags: BTreeSet<String>,
    #[serde(default)]
    pub failed_medications: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ReviewRequest {
    /// Replacement lines; starts the next revision round.
    #[serde(default)]
    pub lines: Option<Vec<PrescriptionLine>>,
    #[serde(default)]
    pub advisory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewResponse {
    pub review: PrescriptionReview,
    pub advisory: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EvaluationRequest {
    #[serde(default)]
    pub advisory: bool,
}

struct RxState {
    draft: PrescriptionDraft,
    patient_flags: BTreeSet<String>,
}

struct SessionRecord {
    owner: String,
    case: CaseRecord,
    session: DialogueSession,
    orders: Vec<ExamOrder>,
    diagnosis: Option<DiagnosisRecord>,
    prescriptions: BTreeMap<String, RxState>,
    last_review: Option<PrescriptionReview>,
}

type SharedSession = Arc<Mutex<SessionRecord>>;

pub struct PlatformService {
    kb: Arc<KnowledgeBase>,
    templates: Arc<TemplateSet>,
    feedback: FeedbackTemplates,
    gateway: Arc<LlmGateway>,
    coordinator: TaskCoordinator,
    engine: DialogueEngine,
    auth: AuthService,
    matrix: PermissionMatrix,
    audit: AuditLog,
    store: DataStore,
    cases: VersionedCache<CaseDocument>,
    progress: VersionedCache<ProgressProfile>,
    sessions: DashMap<String, SharedSession>,
    prescriptions: DashMap<String, String>,
    ids: Arc<IdGenerator>,
    clock: Arc<dyn Clock>,
    roster: Roster,
    seed: u64,
    weights: Weights,
}

/// Everything needed to assemble a service.
pub struct ServiceParts {
    pub config: PlatformConfig,
    pub kb: KnowledgeBase,
    pub gateway: Arc<LlmGateway>,
    pub clock: Arc<dyn Clock>,
    pub ids: IdGenerator,
    pub store: DataStore,
    pub audit: AuditLog,
    pub jwt_secret: Vec<u8>,
}

fn read_support<T>(
    dir: Option<&std::path::Path>,
    name: &str,
    fallback: &str,
    parse: impl FnOnce(&str) -> Result<T, String>,
) -> Result<T, ServiceError> {
    let text = read_data_file(dir, name, fallback)?;
    parse(&text).map_err(|e| ServiceError::new(500, "KbError", format!("{name}: {e}")))
}

impl PlatformService {
    pub fn new(parts: ServiceParts) -> Result<Self, ServiceError> {
        let ServiceParts {
            config,
            kb,
            gateway,
            clock,
            ids,
            store,
            audit,
            jwt_secret,
        } = parts;
        config.validate().map_err(|e| ServiceError::bad_request(e.to_string()))?;
        let dir = config.kb_dir.as_deref();
        let templates = Arc::new(read_support(dir, "prompts.json", seed::PROMPTS, |t| {
            TemplateSet::from_json(t).map_err(|e| e.to_string())
        })?);
        let rules = Arc::new(read_support(dir, "validation_rules.json", seed::VALIDATION_RULES, |t| {
            RuleSet::from_json(t, &PredicateRegistry::builtins()).map_err(|e| e.to_string())
        })?);
        let lexicon = Arc::new(read_support(dir, "lexicon.json", seed::LEXICON, |t| {
            Lexicon::from_json(t).map_err(|e| e.to_string())
        })?);
        let feedback = read_support(dir, "feedback_templates.json", seed::FEEDBACK_TEMPLATES, |t| {
            FeedbackTemplates::from_json(t).map_err(|e| e.to_string())
        })?;

        let kb = Arc::new(kb);
        let ids = Arc::new(ids);
        let pipeline = CasePipeline::new(
            kb.clone(),
            rules,
            templates.clone(),
            gateway.clone(),
            clock.clone(),
            config.seed,
        );
        let engine = DialogueEngine::new(kb.clone(), lexicon, templates.clone(), gateway.clone(), config.dialogue);
        let auth = AuthService::new(
            &jwt_secret,
            config.auth.token_ttl_secs,
            config.auth.lockout_threshold,
            clock.clone(),
        );
        let service = Self {
            coordinator: TaskCoordinator::new(Arc::new(pipeline), ids.clone()),
            engine,
            auth,
            matrix: PermissionMatrix::seeded(),
            audit,
            store,
            cases: VersionedCache::new(),
            progress: VersionedCache::new(),
            sessions: DashMap::new(),
            prescriptions: DashMap::new(),
            ids,
            clock,
            roster: Roster::new(&config.privacy.roster),
            seed: config.seed,
            weights: config.evaluation,
            kb,
            templates,
            feedback,
            gateway,
        };
        service.load_persisted()?;
        Ok(service)
    }

    /// Builds the whole stack from a config file's settings.
    pub fn from_config(config: PlatformConfig) -> Result<Self, ServiceError> {
        let invalid = |e: String| ServiceError::bad_request(e);
        let kb = KnowledgeBase::load(config.kb_dir.as_deref())?;
        let provider: Arc<dyn LlmProvider> = match config.provider.kind {
            ProviderKind::Scripted => Arc::new(match &config.provider.script {
                Some(path) => crate::gateway::load_script(path).map_err(|e| invalid(e.to_string()))?,
                None => ScriptedProvider::demo(),
            }),
            ProviderKind::Http => {
                let http = config.provider.http().map_err(|e| invalid(e.to_string()))?;
                Arc::new(HttpProvider::from_config(&http))
            }
        };
        let gateway = Arc::new(LlmGateway::new(provider, config.provider.limits.clone())?);
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let (store, audit, ids) = match &config.storage.data_dir {
            Some(dir) => {
                let namespace = format!("{:x}", clock.now_ms());
                (
                    DataStore::open(dir.join("store"))?,
                    AuditLog::open(dir.join("audit.jsonl"), clock.clone())?,
                    IdGenerator::with_namespace(namespace),
                )
            }
            None => (DataStore::in_memory(), AuditLog::in_memory(clock.clone()), IdGenerator::new()),
        };
        let jwt_secret = match std::env::var(&config.auth.jwt_secret_env) {
            Ok(secret) if !secret.is_empty() => secret.into_bytes(),
            _ => {
                use rand::RngCore;
                let mut key = vec![0u8; 32];
                rand::thread_rng().fill_bytes(&mut key);
                key
            }
        };
        let bootstrap = (
            config.auth.bootstrap_admin.clone(),
            std::env::var(&config.auth.bootstrap_credential_env).ok(),
        );
        let service = Self::new(ServiceParts {
            config,
            kb,
            gateway,
            clock,
            ids,
            store,
            audit,
            jwt_secret,
        })?;
        if let (login, Some(credential)) = bootstrap {
            if service.auth.user(&login).is_none() {
                service.bootstrap_user(&login, &credential, Role::Administrator)?;
            }
        }
        Ok(service)
    }

    /// Deterministic in-memory stack on the embedded demo script: step
    /// clock, sequential ids, fixed signing key.
    pub fn scripted(seed: u64) -> Self {
        let clock: Arc<dyn Clock> = Arc::new(StepClock::new(1_700_000_000_000, 1));
        let gateway = LlmGateway::new(Arc::new(ScriptedProvider::demo()), Default::default())
            .expect("default provider config is valid");
        Self::new(ServiceParts {
            config: PlatformConfig {
                seed,
                ..PlatformConfig::default()
            },
            kb: KnowledgeBase::seed(),
            gateway: Arc::new(gateway),
            audit: AuditLog::in_memory(clock.clone()),
            clock,
            ids: IdGenerator::new(),
            store: DataStore::in_memory(),
            jwt_secret: b"psysim-scripted-signing-key".to_vec(),
        })
        .expect("embedded data is valid")
    }

    fn load_persisted(&self) -> Result<(), ServiceError> {
        for doc in seed_cases() {
            let id = doc.case.id.clone();
            let approved = CaseDocument {
                expert_approved: true,
                ..doc
            };
            if self.store.retrieve(RecordKind::Case, &id).is_err() {
                self.store.store(RecordKind::Case, &approved.to_json())?;
            }
        }
        for id in self.store.ids(RecordKind::Case)? {
            let doc = CaseDocument::from_json(&self.store.retrieve(RecordKind::Case, &id)?)?;
            self.cases.put(&id, doc, 0)?;
        }
        for id in self.store.ids(RecordKind::User)? {
            let account: UserAccount = self.store.retrieve_value(RecordKind::User, &id)?;
            self.auth.add_user(account)?;
        }
        for id in self.store.ids(RecordKind::Progress)? {
            let profile: ProgressProfile = self.store.retrieve_value(RecordKind::Progress, &id)?;
            self.progress.put(&id, profile, 0)?;
        }
        Ok(())
    }

    /// Creates an account without a caller, for bootstrapping and tests.
    pub fn bootstrap_user(&self, login: &str, credential: &str, role: Role) -> Result<UserView, ServiceError> {
        self.create_account("system", login, credential, role)
    }

    fn create_account(&self, actor: &str, login: &str, credential: &str, role: Role) -> Result<UserView, ServiceError> {
        if self.auth.user(login).is_some() {
            return Err(AuthError::DuplicateLogin(login.into()).into());
        }
        let account = UserAccount::new(self.ids.next("user"), login, credential, role);
        self.audit.record(actor, AuditAction::UserCreate, &account.id, "success")?;
        self.auth.add_user(account.clone())?;
        self.store.store_value(RecordKind::User, &account)?;
        Ok(UserView::from(&account))
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn matrix(&self) -> &PermissionMatrix {
        &self.matrix
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    /// Verifies the bearer token and checks the permission matrix.
    pub fn authorize(&self, token: &str, endpoint: &Endpoint) -> Result<Claims, ServiceError> {
        let claims = self.auth.verify(token)?;
        if !self.matrix.is_granted(claims.role.as_str(), endpoint) {
            self.audit
                .record(&claims.sub, AuditAction::AccessDenied, &endpoint.key(), "denied")?;
            return Err(ServiceError::forbidden(format!("{} may not call {}", claims.role, endpoint.key())));
        }
        Ok(claims)
    }

    fn check_owner(claims: &Claims, owner: &str) -> Result<(), ServiceError> {
        if claims.role == Role::Trainee && claims.sub != owner {
            return Err(ServiceError::forbidden("resource belongs to another user"));
        }
        Ok(())
    }

    pub fn login(&self, req: &LoginRequest) -> Result<AuthToken, ServiceError> {
        let result = self.auth.authenticate(&req.login, &req.credential, req.second_factor.as_deref());
        let (actor, outcome) = match &result {
            Ok(token) => (token.user_id.clone(), "success"),
            Err(AuthError::AccountLocked(_)) => (req.login.clone(), "locked"),
            Err(_) => (req.login.clone(), "failure"),
        };
        self.audit.record(&actor, AuditAction::Login, &req.login, outcome)?;
        Ok(result?)
    }

    pub fn create_user(&self, claims: &Claims, req: &CreateUserRequest) -> Result<UserView, ServiceError> {
        self.create_account(&claims.sub, &req.login, &req.credential, req.role)
    }

    pub fn audit_records(&self, _claims: &Claims) -> Vec<AuditRecord> {
        self.audit.records()
    }

    fn scrub_case(&self, case: &mut CaseRecord) {
        let scrub = |t: &mut String| *t = anonymize_with(t, &self.roster);
        scrub(&mut case.chief_complaint);
        scrub(&mut case.mental_status);
        scrub(&mut case.demographics.occupation);
        scrub(&mut case.history.present_illness);
        scrub(&mut case.history.past);
        scrub(&mut case.history.family);
        scrub(&mut case.history.personal);
    }

    /// Runs one generation task to completion. Successful cases are stored
    /// unapproved; they become available for training once approved.
    pub async fn generate_case(&self, claims: &Claims, spec: GenerationSpec) -> Result<GenerationTask, ServiceError> {
        let mut task = self.coordinator.generate(spec).await?;
        let outcome = match task.state {
            TaskState::Done => "done",
            _ => "failed",
        };
        self.audit.record(&claims.sub, AuditAction::CaseGenerate, &task.id, outcome)?;
        if task.state == TaskState::Done {
            self.scrub_case(&mut task.draft);
            let doc = CaseDocument::new(task.draft.clone());
            self.store.store(RecordKind::Case, &doc.to_json())?;
            self.cases.put(&task.id, doc, 0)?;
        }
        Ok(task)
    }

    pub fn approve_case(&self, claims: &Claims, case_id: &str) -> Result<CaseDocument, ServiceError> {
        let entry = self
            .cases
            .get(case_id)
            .ok_or_else(|| ServiceError::not_found(format!("case {case_id}")))?;
        if entry.value.expert_approved {
            return Ok(entry.value);
        }
        self.audit.record(&claims.sub, AuditAction::CaseApprove, case_id, "approved")?;
        let doc = CaseDocument {
            expert_approved: true,
            ..entry.value
        };
        self.cases.put(case_id, doc.clone(), entry.version)?;
        self.store.store(RecordKind::Case, &doc.to_json())?;
        Ok(doc)
    }

    /// Trainees only see approved cases, without the answer key.
    pub fn get_case(&self, claims: &Claims, case_id: &str) -> Result<CaseDocument, ServiceError> {
        let not_found = || ServiceError::not_found(format!("case {case_id}"));
        let mut doc = self.cases.get(case_id).ok_or_else(not_found)?.value;
        if claims.role == Role::Trainee {
            if !doc.expert_approved {
                return Err(not_found());
            }
            let c = &mut doc.case;
            c.ground_truth_dx.clear();
            c.symptoms.clear();
            c.required_topics.clear();
            c.reference_exams.clear();
            c.reference_rx.clear();
        }
        Ok(doc)
    }

    pub fn case_ids(&self) -> Result<Vec<String>, ServiceError> {
        Ok(self.store.ids(RecordKind::Case)?)
    }

    fn session(&self, id: &str) -> Result<SharedSession, ServiceError> {
        self.sessions
            .get(id)
            .map(|s| s.clone())
            .ok_or_else(|| ServiceError::new(404, "UnknownSession", format!("unknown session {id}")))
    }

    fn persist_session(&self, rec: &SessionRecord) -> Result<(), ServiceError> {
        self.store.store_value(RecordKind::Session, &rec.session)?;
        Ok(())
    }

    pub fn open_session(&self, claims: &Claims, req: &OpenSessionRequest) -> Result<SessionView, ServiceError> {
        let doc = self
            .cases
            .get(&req.case_id)
            .ok_or_else(|| ServiceError::new(404, "UnknownCase", format!("unknown case {}", req.case_id)))?
            .value;
        let mode = req.mode.unwrap_or(SessionMode::Standard);
        let focus = match mode {
            SessionMode::Review => self.progress.get(&claims.sub).and_then(|p| p.value.weakest()),
            _ => None,
        };
        let id = self.ids.next("sess");
        let session = self.engine.open_session(
            &id,
            &doc.case,
            doc.expert_approved,
            mode,
            task_seed(self.seed, &id),
            focus,
        )?;
        let view = SessionView::from(&session);
        let rec = SessionRecord {
            owner: claims.sub.clone(),
            case: doc.case,
            session,
            orders: Vec::new(),
            diagnosis: None,
            prescriptions: BTreeMap::new(),
            last_review: None,
        };
        self.persist_session(&rec)?;
        self.sessions.insert(id, Arc::new(Mutex::new(rec)));
        Ok(view)
    }

    pub async fn turn(&self, claims: &Claims, session_id: &str, req: &TurnRequest) -> Result<TurnResponse, ServiceError> {
        let shared = self.session(session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        let (doctor, patient) = self.engine.exchange(&mut rec.session, &req.text).await?;
        self.persist_session(&rec)?;
        Ok(TurnResponse { doctor, patient })
    }

    pub async fn replay(&self, claims: &Claims, session_id: &str) -> Result<Replay, ServiceError> {
        let shared = self.session(session_id)?;
        let rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        Ok(self.engine.replay(&rec.session))
    }

    pub fn recommend_exams(&self, _claims: &Claims, req: &RecommendRequest) -> Result<Vec<ExamRecommendation>, ServiceError> {
        let weights = req.weights.unwrap_or_default();
        Ok(exams::recommend(
            &req.symptom_tags,
            req.provisional_dx.as_deref(),
            &self.kb.exams,
            &weights,
        )?)
    }

    pub async fn order_exams(&self, claims: &Claims, req: &OrderRequest) -> Result<ExamOrder, ServiceError> {
        let shared = self.session(&req.session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        if req.items.is_empty() {
            return Err(ServiceError::bad_request("an order needs at least one item"));
        }
        let mut order = exams::order(
            self.ids.next("order"),
            &rec.case.id,
            &req.items,
            &req.patient_flags,
            &self.kb.exams,
        )?;
        if req.acknowledge_all {
            order.acknowledge_all();
        }
        for ack in &req.acknowledge {
            order.acknowledge(&ack.item, &ack.flag);
        }
        if order.alerts.iter().all(|a| a.acknowledged) {
            order.confirm()?;
        }
        self.store.store_value(RecordKind::ExamOrder, &order)?;
        rec.orders.push(order.clone());
        Ok(order)
    }

    fn ranking_line(ranking: &[DiagnosisHypothesis]) -> String {
        ranking
            .iter()
            .map(|h| {
                format!(
                    "{} ({}, coverage {:.2})",
                    h.disorder_code,
                    if h.eligible { "eligible" } else { "not eligible" },
                    h.coverage
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Ranks findings by the criteria. The optional model commentary is
    /// attached afterwards and never changes the ranking.
    pub async fn diagnose(&self, claims: &Claims, req: &DiagnosisRequest) -> Result<DiagnosisRecord, ServiceError> {
        let shared = self.session(&req.session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        if req.dx.trim().is_empty() {
            return Err(ServiceError::bad_request("dx is required"));
        }
        let findings = req.findings.clone().unwrap_or_else(|| rec.case.symptoms.clone());
        let ranking = match_criteria(&findings, &self.kb.disorders);
        let advisory_text = if req.advisory {
            let tags: Vec<&str> = findings.iter().map(|f| f.tag.as_str()).collect();
            let template = self.templates.get("diagnosis_advice")?;
            let prompt = render_prompt(
                template,
                &params([("findings", tags.join(", ")), ("ranking", Self::ranking_line(&ranking))]),
            )?;
            match self.gateway.complete_prompt(prompt).await {
                Ok(resp) => resp.text,
                Err(err) => {
                    tracing::warn!(session = %req.session_id, %err, "diagnostic suggestion unavailable");
                    String::new()
                }
            }
        } else {
            String::new()
        };
        let suggestion = merge_llm_suggestion(&ranking, &advisory_text, &self.kb.disorders);
        let treatment = recommend_treatment(&req.dx, &self.kb.disorders, &self.kb.pharmacy, true).ok();
        let record = DiagnosisRecord {
            id: self.ids.next("dx"),
            session_id: req.session_id.clone(),
            entered: req.dx.clone(),
            findings,
            differential: differential(&suggestion.ranking, &self.kb.disorders),
            ranking: suggestion.ranking,
            treatment,
            advisory: suggestion.advisory_narrative,
            mentions: suggestion.mentions,
            agreement: suggestion.agreement,
            notice: suggestion.notice,
        };
        self.store.store_value(RecordKind::Diagnosis, &record)?;
        rec.diagnosis = Some(record.clone());
        Ok(record)
    }

    pub async fn create_prescription(&self, claims: &Claims, req: &PrescriptionRequest) -> Result<PrescriptionDraft, ServiceError> {
        let shared = self.session(&req.session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        let dx = req
            .dx
            .clone()
            .or_else(|| rec.diagnosis.as_ref().map(|d| d.entered.clone()))
            .ok_or_else(|| ServiceError::new(422, "MissingDiagnosis", "enter a diagnosis before prescribing"))?;
        let id = self.ids.next("rx");
        let draft = match &req.lines {
            Some(lines) => {
                let draft = PrescriptionDraft::new(&id, &rec.case.id, &dx, lines.clone());
                draft.validate()?;
                draft
            }
            None => {
                let patient = PatientProfile {
                    flags: req.patient_flags.clone(),
                    failed_medications: req.failed_medications.clone(),
                };
                let proposal = propose(
                    &id,
                    &rec.case.id,
                    &dx,
                    &patient,
                    &self.kb.disorders,
                    &self.kb.pharmacy,
                    ReviewPolicy::default(),
                )?;
                PrescriptionDraft {
                    round: 1,
                    ..proposal.draft
                }
            }
        };
        self.store.store_value(RecordKind::Prescription, &draft)?;
        rec.prescriptions.insert(
            id.clone(),
            RxState {
                draft: draft.clone(),
                patient_flags: req.patient_flags.clone(),
            },
        );
        self.prescriptions.insert(id, req.session_id.clone());
        Ok(draft)
    }

    /// Gates a draft through the safety checks. The verdict is computed
    /// before, and independently of, any advisory commentary.
    pub async fn review_prescription(
        &self,
        claims: &Claims,
        rx_id: &str,
        req: &ReviewRequest,
    ) -> Result<ReviewResponse, ServiceError> {
        let session_id = self
            .prescriptions
            .get(rx_id)
            .map(|s| s.clone())
            .ok_or_else(|| ServiceError::not_found(format!("prescription {rx_id}")))?;
        let shared = self.session(&session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        let state = rec.prescriptions.get_mut(rx_id).expect("indexed prescription");
        let mut draft = state.draft.clone();
        if let Some(lines) = &req.lines {
            draft.lines = lines.clone();
            draft.round += 1;
        }
        let result = review(&draft, &state.patient_flags, &self.kb.pharmacy, ReviewPolicy::default())?;
        let flags = state.patient_flags.clone();
        let outcome = if result.is_blocked() { "blocked" } else { "approved" };
        self.audit.record(&claims.sub, AuditAction::PrescriptionReview, rx_id, outcome)?;
        if req.advisory {
            attach_advisory(&mut draft, &flags, &self.gateway, &self.templates).await;
        }
        self.store.store_value(RecordKind::Prescription, &draft)?;
        self.store.store_value(RecordKind::Review, &result)?;
        let advisory = draft.advisory.clone();
        rec.prescriptions.get_mut(rx_id).expect("indexed prescription").draft = draft;
        rec.last_review = Some(result.clone());
        Ok(ReviewResponse {
            review: result,
            advisory,
        })
    }

    /// Closes the consultation if needed, scores the session and folds the
    /// result into the trainee's progress profile.
    pub async fn evaluate(&self, claims: &Claims, session_id: &str, req: &EvaluationRequest) -> Result<EvaluationReport, ServiceError> {
        let shared = self.session(session_id)?;
        let mut rec = shared.lock().await;
        Self::check_owner(claims, &rec.owner)?;
        if rec.session.status == SessionStatus::Open {
            self.engine.close(&mut rec.session);
        }
        let ordered: Vec<String> = rec
            .orders
            .iter()
            .filter(|o| o.status == OrderStatus::Confirmed)
            .flat_map(|o| o.items.iter().cloned())
            .collect();
        let ranking: Vec<String> = rec
            .diagnosis
            .as_ref()
            .map(|d| d.ranking.iter().map(|h| h.disorder_code.clone()).collect())
            .unwrap_or_default();
        let artifacts = SessionArtifacts {
            session: &rec.session,
            user_id: &rec.owner,
            ordered_exams: &ordered,
            dx_entered: rec.diagnosis.as_ref().map(|d| d.entered.as_str()),
            ranking: &ranking,
            rx_review: rec.last_review.as_ref(),
            ground_truth: &rec.case.ground_truth_dx,
            reference_exams: &rec.case.reference_exams,
        };
        let mut report = evaluate_session(&artifacts, self.weights, &self.feedback, self.clock.now_ms())?;
        if req.advisory {
            elaborate(&mut report, &self.gateway, &self.templates).await;
        }
        self.audit
            .record(&claims.sub, AuditAction::EvaluationWrite, session_id, "success")?;

        self.persist_session(&rec)?;
        let mut replay = self.engine.replay(&rec.session);
        for entry in &mut replay.entries {
            entry.text = anonymize_with(&entry.text, &self.roster);
        }
        self.store.store_value(RecordKind::Transcript, &replay)?;
        self.store.store_value(RecordKind::Report, &report)?;
        let point = ProgressPoint::from(&report);
        let owner = rec.owner.clone();
        self.progress.update(&owner, |existing| {
            let history = existing.map(|p| p.reports.as_slice()).unwrap_or(&[]);
            track_progress(&owner, history, point.clone())
        });
        if let Some(profile) = self.progress.get(&owner) {
            self.store.store_value(RecordKind::Progress, &profile.value)?;
        }
        Ok(report)
    }

    pub fn progress(&self, claims: &Claims, user_id: &str) -> Result<ProgressProfile, ServiceError> {
        Self::check_owner(claims, user_id)?;
        Ok(self.progress.get(user_id).map(|e| e.value).unwrap_or_else(|| ProgressProfile {
            user_id: user_id.into(),
            reports: Vec::new(),
            trends: BTreeMap::new(),
        }))
    }

    pub fn context_budget(&self) -> ContextBudget {
        self.engine.budget()
    }
}

/// Endpoints guarded by the matrix, for callers that dispatch by name.
pub fn protected_endpoints() -> impl Iterator<Item = &'static Endpoint> {
    rbac::ENDPOINTS.iter().filter(|e| **e != rbac::LOGIN)
}
