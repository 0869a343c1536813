//! Four-dimension scoring of a finished training session, templated
//! feedback and longitudinal progress.
//!
//! | dimension              | score                                                      |
//! |------------------------|------------------------------------------------------------|
//! | consultation_skills    | 100 x covered/required topics, minus 5 per logic or empathy flag |
//! | clinical_thinking      | 100 x NDCG of the exam order against the reference exams   |
//! | diagnostic_accuracy    | 100 exact, 60 if within the rule-engine top 3, else 0      |
//! | medication_rationality | 100 - 25 per major - 50 per contraindicated finding        |
//!
//! All scores are floored at 0. The composite is a weighted sum.

mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueSession, FlagCategory, SessionStatus};
use crate::gateway::{params, render_prompt, LlmGateway, TemplateSet};
use crate::prescription::{PrescriptionReview, Severity};

pub use templates::{FeedbackTemplates, TemplateError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("session {0} is still open")]
    SessionNotClosed(String),
    #[error("no diagnosis entered for session {0}")]
    MissingDiagnosis(String),
    #[error("weights must be non-negative and sum to 1, got {0}")]
    InvalidWeights(f64),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    ConsultationSkills,
    ClinicalThinking,
    DiagnosticAccuracy,
    MedicationRationality,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::ConsultationSkills,
        Dimension::ClinicalThinking,
        Dimension::DiagnosticAccuracy,
        Dimension::MedicationRationality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::ConsultationSkills => "consultation_skills",
            Dimension::ClinicalThinking => "clinical_thinking",
            Dimension::DiagnosticAccuracy => "diagnostic_accuracy",
            Dimension::MedicationRationality => "medication_rationality",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub consultation_skills: f64,
    pub clinical_thinking: f64,
    pub diagnostic_accuracy: f64,
    pub medication_rationality: f64,
}

impl DimensionScores {
    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::ConsultationSkills => self.consultation_skills,
            Dimension::ClinicalThinking => self.clinical_thinking,
            Dimension::DiagnosticAccuracy => self.diagnostic_accuracy,
            Dimension::MedicationRationality => self.medication_rationality,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Dimension) -> f64) -> Self {
        Self {
            consultation_skills: f(Dimension::ConsultationSkills),
            clinical_thinking: f(Dimension::ClinicalThinking),
            diagnostic_accuracy: f(Dimension::DiagnosticAccuracy),
            medication_rationality: f(Dimension::MedicationRationality),
        }
    }

    /// Lowest-scoring dimension; ties go to the earlier dimension.
    pub fn weakest(&self) -> Dimension {
        Dimension::ALL
            .into_iter()
            .fold(Dimension::ConsultationSkills, |best, d| if self.get(d) < self.get(best) { d } else { best })
    }
}

/// Composite weights. Defaults are 0.30, 0.25, 0.30, 0.15.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub DimensionScores);

impl Default for Weights {
    fn default() -> Self {
        Weights(DimensionScores {
            consultation_skills: 0.30,
            clinical_thinking: 0.25,
            diagnostic_accuracy: 0.30,
            medication_rationality: 0.15,
        })
    }
}

impl Weights {
    pub fn new(scores: DimensionScores) -> Result<Self, EvaluationError> {
        let sum: f64 = Dimension::ALL.iter().map(|d| scores.get(*d)).sum();
        let negative = Dimension::ALL.iter().any(|d| !(scores.get(*d) >= 0.0));
        if negative || (sum - 1.0).abs() > 1e-9 {
            return Err(EvaluationError::InvalidWeights(sum));
        }
        Ok(Weights(scores))
    }

    pub fn composite(&self, dims: &DimensionScores) -> f64 {
        Dimension::ALL.iter().map(|d| self.0.get(*d) * dims.get(*d)).sum()
    }
}

/// Binary-relevance NDCG of `ordered` against `reference`, in [0, 1].
/// Repeated orders count once, at their first position.
pub fn ranked_overlap(ordered: &[String], reference: &[String]) -> f64 {
    let relevant: BTreeSet<&str> = reference.iter().map(String::as_str).collect();
    if relevant.is_empty() {
        return 1.0;
    }
    let mut seen = BTreeSet::new();
    let dcg: f64 = ordered
        .iter()
        .filter(|e| seen.insert(e.as_str()))
        .enumerate()
        .filter(|(_, e)| relevant.contains(e.as_str()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len()).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedTurn {
    pub turn: usize,
    pub category: FlagCategory,
    pub detail: String,
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RxEvidence {
    pub severity: Severity,
    pub detail: String,
}

/// Artifacts the scores were computed from; feedback cites these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub missed_topics: Vec<String>,
    pub flagged_turns: Vec<FlaggedTurn>,
    pub ordered_exams: Vec<String>,
    pub missing_exams: Vec<String>,
    pub dx_entered: String,
    pub ground_truth: String,
    pub top3: Vec<String>,
    pub rx_findings: Vec<RxEvidence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Deficiency,
    Strength,
    Drill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "ref", rename_all = "snake_case")]
pub enum EvidenceRef {
    Turn(usize),
    Topic(String),
    Exam(String),
    Hypothesis(String),
    Finding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    /// `None` for the cross-dimension strength summary.
    pub dimension: Option<Dimension>,
    pub kind: FeedbackKind,
    pub template_id: String,
    pub slots: BTreeMap<String, String>,
    pub text: String,
    pub evidence: Option<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub session_id: String,
    pub case_id: String,
    pub user_id: String,
    pub created_at: u64,
    pub dims: DimensionScores,
    pub composite: f64,
    pub weights: Weights,
    pub evidence: Evidence,
    pub feedback: Vec<FeedbackItem>,
    /// Model-written elaboration, shown after the templated feedback.
    pub advisory: Option<String>,
}

/// What the trainee did, besides the consultation itself.
#[derive(Debug, Clone, Copy)]
pub struct SessionArtifacts<'a> {
    pub session: &'a DialogueSession,
    pub user_id: &'a str,
    pub ordered_exams: &'a [String],
    pub dx_entered: Option<&'a str>,
    /// Rule-engine ranking for the case, best first.
    pub ranking: &'a [String],
    /// `None` when no prescription was written, as for disorders without a
    /// drug guideline.
    pub rx_review: Option<&'a PrescriptionReview>,
    pub ground_truth: &'a str,
    pub reference_exams: &'a [String],
}

/// Scores feedback at or above this are not reported as deficient.
pub const DEFICIENCY_THRESHOLD: f64 = 90.0;
pub const FLAG_PENALTY: f64 = 5.0;

pub fn evaluate_session(
    artifacts: &SessionArtifacts<'_>,
    weights: Weights,
    templates: &FeedbackTemplates,
    created_at: u64,
) -> Result<EvaluationReport, EvaluationError> {
    let session = artifacts.session;
    if session.status != SessionStatus::Closed {
        return Err(EvaluationError::SessionNotClosed(session.id.clone()));
    }
    let dx = artifacts
        .dx_entered
        .filter(|d| !d.trim().is_empty())
        .ok_or_else(|| EvaluationError::MissingDiagnosis(session.id.clone()))?;

    let required: BTreeSet<&String> = session.required_topics.iter().collect();
    let covered = required.iter().filter(|t| session.asked_topics.contains(**t)).count();
    let coverage = if required.is_empty() { 1.0 } else { covered as f64 / required.len() as f64 };
    let flagged_turns: Vec<FlaggedTurn> = session
        .turns
        .iter()
        .flat_map(|t| t.feedback_flags.iter().map(move |f| (t.index, f)))
        .filter(|(_, f)| matches!(f.category, FlagCategory::Logic | FlagCategory::Empathy))
        .map(|(turn, f)| FlaggedTurn {
            turn,
            category: f.category,
            detail: f.detail.clone(),
            suggestion: f.suggestion.clone(),
        })
        .collect();
    let consultation = (100.0 * coverage - FLAG_PENALTY * flagged_turns.len() as f64).max(0.0);

    let clinical = 100.0 * ranked_overlap(artifacts.ordered_exams, artifacts.reference_exams);

    let top3: Vec<String> = artifacts.ranking.iter().take(3).cloned().collect();
    let diagnostic = if dx == artifacts.ground_truth {
        100.0
    } else if top3.iter().any(|c| c == dx) {
        60.0
    } else {
        0.0
    };

    let rx_findings: Vec<RxEvidence> = artifacts
        .rx_review
        .map(|r| {
            r.findings
                .iter()
                .filter(|f| f.severity >= Severity::Major)
                .map(|f| RxEvidence {
                    severity: f.severity,
                    detail: f.detail.clone(),
                })
                .collect()
        })
        .unwrap_or_default();
    let majors = rx_findings.iter().filter(|f| f.severity == Severity::Major).count() as f64;
    let contra = rx_findings.iter().filter(|f| f.severity == Severity::Contraindicated).count() as f64;
    let medication = (100.0 - 25.0 * majors - 50.0 * contra).max(0.0);

    let dims = DimensionScores {
        consultation_skills: consultation,
        clinical_thinking: clinical,
        diagnostic_accuracy: diagnostic,
        medication_rationality: medication,
    };
    let ordered: BTreeSet<&str> = artifacts.ordered_exams.iter().map(String::as_str).collect();
    let evidence = Evidence {
        missed_topics: session.missed_topics(),
        flagged_turns,
        ordered_exams: artifacts.ordered_exams.to_vec(),
        missing_exams: artifacts
            .reference_exams
            .iter()
            .filter(|e| !ordered.contains(e.as_str()))
            .cloned()
            .collect(),
        dx_entered: dx.to_string(),
        ground_truth: artifacts.ground_truth.to_string(),
        top3,
        rx_findings,
    };
    let mut report = EvaluationReport {
        session_id: session.id.clone(),
        case_id: session.case_id.clone(),
        user_id: artifacts.user_id.to_string(),
        created_at,
        composite: weights.composite(&dims),
        dims,
        weights,
        evidence,
        feedback: Vec::new(),
        advisory: None,
    };
    report.feedback = generate_feedback(&report, templates)?;
    Ok(report)
}

fn item(
    templates: &FeedbackTemplates,
    dimension: Option<Dimension>,
    kind: FeedbackKind,
    id: &str,
    slots: BTreeMap<String, String>,
    evidence: Option<EvidenceRef>,
) -> Result<FeedbackItem, TemplateError> {
    Ok(FeedbackItem {
        dimension,
        kind,
        template_id: id.to_string(),
        text: templates.fill(id, &slots)?,
        slots,
        evidence,
    })
}

fn humanize(tag: &str) -> String {
    tag.replace('_', " ")
}

/// Deficiencies for every dimension under the threshold, each citing its
/// evidence, then one drill on the weakest dimension. A strength summary
/// replaces the deficiencies when every dimension clears the threshold.
pub fn generate_feedback(report: &EvaluationReport, templates: &FeedbackTemplates) -> Result<Vec<FeedbackItem>, TemplateError> {
    use Dimension::*;
    use FeedbackKind::*;
    let ev = &report.evidence;
    let mut out = Vec::new();
    let weak = |d: Dimension| report.dims.get(d) < DEFICIENCY_THRESHOLD;

    if weak(ConsultationSkills) {
        for topic in &ev.missed_topics {
            out.push(item(
                templates,
                Some(ConsultationSkills),
                Deficiency,
                "consultation.missed_topic",
                params([("topic", humanize(topic))]),
                Some(EvidenceRef::Topic(topic.clone())),
            )?);
        }
        for f in &ev.flagged_turns {
            let (id, slots) = match f.category {
                FlagCategory::Empathy => (
                    "consultation.empathy_flag",
                    params([("turn", f.turn.to_string()), ("suggestion", f.suggestion.clone())]),
                ),
                _ => (
                    "consultation.logic_flag",
                    params([
                        ("turn", f.turn.to_string()),
                        ("detail", f.detail.clone()),
                        ("suggestion", f.suggestion.clone()),
                    ]),
                ),
            };
            out.push(item(templates, Some(ConsultationSkills), Deficiency, id, slots, Some(EvidenceRef::Turn(f.turn)))?);
        }
    }
    if weak(ClinicalThinking) {
        if ev.missing_exams.is_empty() {
            let first = ev.ordered_exams.first().cloned().unwrap_or_default();
            out.push(item(
                templates,
                Some(ClinicalThinking),
                Deficiency,
                "clinical.order_sequence",
                params([("exams", ev.ordered_exams.join(", "))]),
                Some(EvidenceRef::Exam(first)),
            )?);
        }
        for exam in &ev.missing_exams {
            out.push(item(
                templates,
                Some(ClinicalThinking),
                Deficiency,
                "clinical.missing_exam",
                params([("exam", exam.clone())]),
                Some(EvidenceRef::Exam(exam.clone())),
            )?);
        }
    }
    if weak(DiagnosticAccuracy) {
        let id = if ev.top3.contains(&ev.dx_entered) { "diagnosis.near_miss" } else { "diagnosis.wrong" };
        out.push(item(
            templates,
            Some(DiagnosticAccuracy),
            Deficiency,
            id,
            params([("entered", ev.dx_entered.clone()), ("truth", ev.ground_truth.clone())]),
            Some(EvidenceRef::Hypothesis(ev.dx_entered.clone())),
        )?);
    }
    if weak(MedicationRationality) {
        for f in &ev.rx_findings {
            out.push(item(
                templates,
                Some(MedicationRationality),
                Deficiency,
                "medication.finding",
                params([("severity", f.severity.to_string()), ("detail", f.detail.clone())]),
                Some(EvidenceRef::Finding(f.detail.clone())),
            )?);
        }
    }

    if Dimension::ALL.iter().all(|d| !weak(*d)) {
        out.push(item(
            templates,
            None,
            Strength,
            "strength.summary",
            params([("composite", format!("{:.1}", report.composite))]),
            None,
        )?);
    }

    let weakest = report.dims.weakest();
    let drill_slots = match weakest {
        ConsultationSkills => {
            let topics = if ev.missed_topics.is_empty() {
                "every required topic".to_string()
            } else {
                ev.missed_topics.iter().map(|t| humanize(t)).collect::<Vec<_>>().join(", ")
            };
            params([("topics", topics)])
        }
        DiagnosticAccuracy => params([("truth", ev.ground_truth.clone())]),
        ClinicalThinking | MedicationRationality => BTreeMap::new(),
    };
    out.push(item(
        templates,
        Some(weakest),
        Drill,
        &format!("drill.{}", weakest.as_str()),
        drill_slots,
        None,
    )?);
    Ok(out)
}

/// Asks the model to elaborate on the templated feedback. The templated items
/// are not modified; failures leave `advisory` empty.
pub async fn elaborate(report: &mut EvaluationReport, gateway: &LlmGateway, prompts: &TemplateSet) {
    let Ok(template) = prompts.get("feedback_elaboration") else {
        return;
    };
    let scores: Vec<String> = Dimension::ALL
        .iter()
        .map(|d| format!("{}={:.1}", d, report.dims.get(*d)))
        .chain(std::iter::once(format!("composite={:.1}", report.composite)))
        .collect();
    let items: Vec<String> = report.feedback.iter().map(|f| format!("- {}", f.text)).collect();
    let Ok(prompt) = render_prompt(template, &params([("scores", scores.join(", ")), ("items", items.join("\n"))])) else {
        return;
    };
    match gateway.complete_prompt(prompt).await {
        Ok(resp) => report.advisory = Some(resp.text),
        Err(err) => tracing::warn!(session = %report.session_id, %err, "feedback elaboration unavailable"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressPoint {
    pub session_id: String,
    pub at: u64,
    pub dims: DimensionScores,
    pub composite: f64,
}

impl From<&EvaluationReport> for ProgressPoint {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            session_id: r.session_id.clone(),
            at: r.created_at,
            dims: r.dims,
            composite: r.composite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub first: f64,
    pub last: f64,
    /// Percent change; absent with fewer than two reports or a zero baseline.
    pub delta_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressProfile {
    pub user_id: String,
    /// Chronological.
    pub reports: Vec<ProgressPoint>,
    /// Keyed by dimension name plus `composite`.
    pub trends: BTreeMap<String, Trend>,
}

impl ProgressProfile {
    /// Weakest dimension of the most recent report.
    pub fn weakest(&self) -> Option<Dimension> {
        self.reports.last().map(|p| p.dims.weakest())
    }
}

fn trend(values: &[f64]) -> Trend {
    let (first, last) = (values[0], values[values.len() - 1]);
    let delta_percent = (values.len() >= 2 && first > 0.0).then(|| 100.0 * (last - first) / first);
    Trend {
        first,
        last,
        delta_percent,
    }
}

/// Recomputes the profile with `new` added.
pub fn track_progress(user_id: &str, history: &[ProgressPoint], new: ProgressPoint) -> ProgressProfile {
    let mut reports: Vec<ProgressPoint> = history.iter().filter(|p| p.session_id != new.session_id).cloned().collect();
    reports.push(new);
    reports.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.session_id.cmp(&b.session_id)));
    let mut trends = BTreeMap::new();
    for d in Dimension::ALL {
        let values: Vec<f64> = reports.iter().map(|p| p.dims.get(d)).collect();
        trends.insert(d.as_str().to_string(), trend(&values));
    }
    let composites: Vec<f64> = reports.iter().map(|p| p.composite).collect();
    trends.insert("composite".into(), trend(&composites));
    ProgressProfile {
        user_id: user_id.to_string(),
        reports,
        trends,
    }
}
