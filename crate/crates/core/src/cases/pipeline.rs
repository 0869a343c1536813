//! Case generation state machine.
//!
//! ```text
//! Init -> FrameworkGeneration -> ContentFilling -> LogicalChecks -> StyleAdjustment -> Done
//!                                                        |
//!                                                        v
//!                                                      Failed
//! ```
//!
//! Each [`CasePipeline::advance`] performs the work of the current state and
//! moves exactly one step. A provider failure that survives the gateway's
//! retries fails the task from whichever stage made the call.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use dashmap::DashMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::content::{parse_case_content, parse_style_content};
use super::model::{CaseRecord, SymptomInstance};
use super::quality::{score_quality, QualityScore};
use super::rules::{validate_case, RuleSet, ValidationReport};
use crate::clock::{Clock, Timestamp};
use crate::diagnosis::DisorderCriteria;
use crate::gateway::{params, render_layer, LayerName, LlmGateway, PromptError, TemplateSet};
use crate::ids::IdGenerator;
use crate::kb::KnowledgeBase;

pub const CASE_TEMPLATE: &str = "case_generation";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Init,
    FrameworkGeneration,
    ContentFilling,
    LogicalChecks,
    StyleAdjustment,
    Done,
    Failed,
}

impl TaskState {
    /// The successful path, in order.
    pub const CHAIN: [TaskState; 6] = [
        TaskState::Init,
        TaskState::FrameworkGeneration,
        TaskState::ContentFilling,
        TaskState::LogicalChecks,
        TaskState::StyleAdjustment,
        TaskState::Done,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }

    fn next(self) -> TaskState {
        let i = Self::CHAIN.iter().position(|s| *s == self).expect("non-terminal state");
        Self::CHAIN[i + 1]
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("unknown disorder {0}")]
    UnknownDisorder(String),
    #[error("difficulty {0} is outside 1-5")]
    InvalidDifficulty(i64),
    #[error("task {id} is already {state}")]
    Terminal { id: String, state: TaskState },
    #[error("task {id} stalled in {state}: {cause}")]
    Stalled { id: String, state: TaskState, cause: String },
    #[error("no generation task {0}")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub disorder_code: String,
    pub difficulty: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: TaskState,
    pub to: TaskState,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTask {
    pub id: String,
    pub spec: GenerationSpec,
    pub state: TaskState,
    pub draft: CaseRecord,
    pub framework: Option<String>,
    pub report: Option<ValidationReport>,
    pub quality: Option<QualityScore>,
    pub failure: Option<String>,
    /// Non-fatal events worth showing to a reviewer.
    pub notes: Vec<String>,
    pub created_at: Timestamp,
    pub transitions: Vec<Transition>,
    /// Time spent waiting on the provider; excluded from artifacts because it
    /// is wall-clock.
    #[serde(skip)]
    pub provider_time: Duration,
}

impl GenerationTask {
    /// States visited so far, starting with `Init`.
    pub fn visited(&self) -> Vec<TaskState> {
        std::iter::once(TaskState::Init).chain(self.transitions.iter().map(|t| t.to)).collect()
    }
}

/// Per-entity seed: the global seed mixed with a digest of the id.
pub fn task_seed(global: u64, id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    global ^ u64::from_le_bytes(bytes)
}

/// Textbook presentation thinned by difficulty: `d - 1` non-core symptoms are
/// dropped (never below the criterion minimum) and each remaining symptom is
/// atypical with probability `0.1 (d - 1)`, capped at `d` atypical symptoms.
pub fn framework_symptoms(criteria: &DisorderCriteria, difficulty: i64, rng: &mut ChaCha8Rng) -> Vec<SymptomInstance> {
    let d = difficulty.clamp(1, 5) as usize;
    let mut removable: Vec<&String> = criteria
        .criterion_tags
        .iter()
        .filter(|t| !criteria.core_tags.contains(t))
        .collect();
    removable.shuffle(rng);
    let spare = criteria.criterion_tags.len().saturating_sub(criteria.min_required);
    let drop: BTreeSet<&String> = removable.into_iter().take((d - 1).min(spare)).collect();

    let p_atypical = 0.1 * (d - 1) as f64;
    let mut atypical_left = d;
    criteria
        .criterion_tags
        .iter()
        .filter(|t| !drop.contains(t))
        .map(|tag| {
            let severity = rng.gen_range(1..=3u8);
            let onset_weeks = criteria.min_duration.max(1) + rng.gen_range(0..=8u32);
            let atypical = atypical_left > 0 && rng.gen_bool(p_atypical);
            if atypical {
                atypical_left -= 1;
            }
            SymptomInstance {
                tag: tag.clone(),
                severity,
                onset_weeks,
                atypical,
            }
        })
        .collect()
}

pub struct CasePipeline {
    kb: Arc<KnowledgeBase>,
    rules: Arc<RuleSet>,
    templates: Arc<TemplateSet>,
    gateway: Arc<LlmGateway>,
    clock: Arc<dyn Clock>,
    seed: u64,
}

impl fmt::Debug for CasePipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CasePipeline").field("seed", &self.seed).finish_non_exhaustive()
    }
}

impl CasePipeline {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        rules: Arc<RuleSet>,
        templates: Arc<TemplateSet>,
        gateway: Arc<LlmGateway>,
        clock: Arc<dyn Clock>,
        seed: u64,
    ) -> Self {
        Self {
            kb,
            rules,
            templates,
            gateway,
            clock,
            seed,
        }
    }

    pub fn kb(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn start_generation(&self, id: impl Into<String>, spec: GenerationSpec) -> Result<GenerationTask, PipelineError> {
        if self.kb.disorders.get(&spec.disorder_code).is_none() {
            return Err(PipelineError::UnknownDisorder(spec.disorder_code));
        }
        if !(1..=5).contains(&spec.difficulty) {
            return Err(PipelineError::InvalidDifficulty(spec.difficulty));
        }
        let id = id.into();
        Ok(GenerationTask {
            draft: CaseRecord {
                id: id.clone(),
                disorder_code: spec.disorder_code.clone(),
                difficulty: spec.difficulty,
                ..Default::default()
            },
            id,
            spec,
            state: TaskState::Init,
            framework: None,
            report: None,
            quality: None,
            failure: None,
            notes: Vec::new(),
            created_at: self.clock.now_ms(),
            transitions: Vec::new(),
            provider_time: Duration::ZERO,
        })
    }

    fn move_to(&self, task: &mut GenerationTask, to: TaskState) {
        task.transitions.push(Transition {
            from: task.state,
            to,
            at: self.clock.now_ms(),
        });
        task.state = to;
    }

    fn stall(&self, task: &mut GenerationTask, cause: String) -> PipelineError {
        let state = task.state;
        task.failure = Some(format!("stalled in {state}: {cause}"));
        self.move_to(task, TaskState::Failed);
        PipelineError::Stalled {
            id: task.id.clone(),
            state,
            cause,
        }
    }

    async fn call_layer(
        &self,
        task: &mut GenerationTask,
        layer: LayerName,
        vars: std::collections::BTreeMap<String, String>,
    ) -> Result<String, PipelineError> {
        let prompt = self
            .templates
            .get(CASE_TEMPLATE)
            .and_then(|t| render_layer(t, layer, &vars))
            .map_err(|e: PromptError| self.stall(task, e.to_string()))?;
        match self.gateway.complete_prompt(prompt).await {
            Ok(resp) => {
                task.provider_time += resp.latency;
                Ok(resp.text)
            }
            Err(e) => Err(self.stall(task, e.to_string())),
        }
    }

    /// Performs the current stage and moves one step along the chain.
    pub async fn advance(&self, task: &mut GenerationTask) -> Result<TaskState, PipelineError> {
        if task.state.is_terminal() {
            return Err(PipelineError::Terminal {
                id: task.id.clone(),
                state: task.state,
            });
        }
        match task.state {
            TaskState::Init => {}
            TaskState::FrameworkGeneration => self.framework_stage(task).await?,
            TaskState::ContentFilling => self.content_stage(task).await?,
            TaskState::LogicalChecks => {
                let report = validate_case(&task.draft, &self.rules, &self.kb);
                let passed = report.passed;
                if !passed {
                    let ids: Vec<&str> = report.blocking().map(|v| v.rule_id.as_str()).collect();
                    task.failure = Some(format!("validation failed: {}", ids.join(", ")));
                }
                task.report = Some(report);
                if !passed {
                    self.move_to(task, TaskState::Failed);
                    return Ok(TaskState::Failed);
                }
            }
            TaskState::StyleAdjustment => self.style_stage(task).await?,
            TaskState::Done | TaskState::Failed => unreachable!("terminal states return early"),
        }
        let next = task.state.next();
        self.move_to(task, next);
        Ok(next)
    }

    async fn framework_stage(&self, task: &mut GenerationTask) -> Result<(), PipelineError> {
        let criteria = self.kb.disorders.get(&task.spec.disorder_code).expect("checked at start").clone();
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(self.seed, &task.id));
        let symptoms = framework_symptoms(&criteria, task.spec.difficulty, &mut rng);

        let term = |s: &SymptomInstance| {
            self.kb
                .symptoms
                .get(&s.tag)
                .map(|d| d.clinical_term.clone())
                .unwrap_or_else(|| s.tag.clone())
        };
        let typical: Vec<String> = symptoms.iter().filter(|s| !s.atypical).map(term).collect();
        let atypical: Vec<String> = symptoms.iter().filter(|s| s.atypical).map(term).collect();
        let vars = params([
            ("disorder_name", criteria.name.clone()),
            ("disorder_code", criteria.disorder_code.clone()),
            ("difficulty", task.spec.difficulty.to_string()),
            ("symptom_list", typical.join(", ")),
            ("atypical_list", if atypical.is_empty() { "none".into() } else { atypical.join(", ") }),
        ]);
        let framework = self.call_layer(task, LayerName::Framework, vars).await?;

        let mut topics = criteria.required_topics.clone();
        if symptoms.iter().any(|s| s.tag == "suicidal_ideation") && !topics.iter().any(|t| t == "suicidality") {
            topics.push("suicidality".into());
        }
        let draft = &mut task.draft;
        draft.ground_truth_dx = criteria.disorder_code.clone();
        draft.symptoms = symptoms;
        draft.required_topics = topics;
        draft.reference_exams = criteria.reference_exams.clone();
        draft.reference_rx = criteria.first_line_drugs.iter().take(1).cloned().collect();
        task.framework = Some(framework);
        Ok(())
    }

    async fn content_stage(&self, task: &mut GenerationTask) -> Result<(), PipelineError> {
        let vars = params([
            ("disorder_code", task.spec.disorder_code.clone()),
            ("framework", task.framework.clone().unwrap_or_default()),
        ]);
        let reply = self.call_layer(task, LayerName::Content, vars).await?;
        match parse_case_content(&reply) {
            Ok(content) => {
                let draft = &mut task.draft;
                draft.demographics = content.demographics;
                draft.chief_complaint = content.chief_complaint;
                draft.history = content.history;
                draft.mental_status = content.mental_status;
                if let Some(s) = content.symptoms {
                    draft.symptoms = s;
                }
                if let Some(t) = content.required_topics {
                    draft.required_topics = t;
                }
                if let Some(e) = content.reference_exams {
                    draft.reference_exams = e;
                }
                if let Some(r) = content.reference_rx {
                    draft.reference_rx = r;
                }
            }
            Err(e) => task.notes.push(format!("content reply not parsed: {e}")),
        }
        Ok(())
    }

    async fn style_stage(&self, task: &mut GenerationTask) -> Result<(), PipelineError> {
        let vars = params([
            ("disorder_code", task.spec.disorder_code.clone()),
            ("chief_complaint", task.draft.chief_complaint.clone()),
            ("mental_status", task.draft.mental_status.clone()),
        ]);
        let reply = self.call_layer(task, LayerName::Style, vars).await?;
        match parse_style_content(&reply) {
            Ok(style) => {
                let mut styled = task.draft.clone();
                styled.chief_complaint = style.chief_complaint;
                styled.mental_status = style.mental_status;
                let report = validate_case(&styled, &self.rules, &self.kb);
                if report.passed {
                    task.draft = styled;
                    task.report = Some(report);
                } else {
                    task.notes.push("style rewrite discarded: it failed validation".into());
                }
            }
            Err(e) => task.notes.push(format!("style reply not parsed: {e}")),
        }
        let report = task.report.as_ref().expect("logical checks ran");
        task.quality = Some(score_quality(report, &self.rules));
        Ok(())
    }
}

/// Owns in-flight tasks. Calls on one task are serialized; different tasks
/// advance concurrently.
#[derive(Debug)]
pub struct TaskCoordinator {
    pipeline: Arc<CasePipeline>,
    ids: Arc<IdGenerator>,
    tasks: DashMap<String, Arc<tokio::sync::Mutex<GenerationTask>>>,
}

impl TaskCoordinator {
    pub fn new(pipeline: Arc<CasePipeline>, ids: Arc<IdGenerator>) -> Self {
        Self {
            pipeline,
            ids,
            tasks: DashMap::new(),
        }
    }

    pub fn pipeline(&self) -> &CasePipeline {
        &self.pipeline
    }

    pub fn submit(&self, spec: GenerationSpec) -> Result<String, PipelineError> {
        let id = self.ids.next("case");
        let task = self.pipeline.start_generation(id.clone(), spec)?;
        self.tasks.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(task)));
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<GenerationTask>>, PipelineError> {
        self.tasks
            .get(id)
            .map(|e| Arc::clone(e.value()))
            .ok_or_else(|| PipelineError::NotFound(id.to_string()))
    }

    pub async fn advance(&self, id: &str) -> Result<TaskState, PipelineError> {
        let slot = self.slot(id)?;
        let mut task = slot.lock().await;
        self.pipeline.advance(&mut task).await
    }

    /// Advances until the task is terminal and returns a snapshot of it.
    pub async fn run(&self, id: &str) -> Result<GenerationTask, PipelineError> {
        let slot = self.slot(id)?;
        let mut task = slot.lock().await;
        while !task.state.is_terminal() {
            match self.pipeline.advance(&mut task).await {
                Ok(_) | Err(PipelineError::Stalled { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(task.clone())
    }

    pub async fn generate(&self, spec: GenerationSpec) -> Result<GenerationTask, PipelineError> {
        let id = self.submit(spec)?;
        self.run(&id).await
    }

    pub async fn get(&self, id: &str) -> Option<GenerationTask> {
        let slot = self.slot(id).ok()?;
        let task = slot.lock().await;
        Some(task.clone())
    }
}
