use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexicon::{Intent, IntentKind, Lexicon};
use super::session::{DialogueSession, FeedbackFlag, FlagCategory, SessionMode, SessionStatus, Speaker, Turn};
use crate::cases::CaseRecord;
use crate::diagnosis::Emotion;
use crate::evaluation::Dimension;
use crate::gateway::{params, render_prompt, GatewayError, LlmGateway, PromptError, TemplateSet};
use crate::kb::KnowledgeBase;

pub const PATIENT_TEMPLATE: &str = "patient_reply";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("turn order violation: expected a {expected:?} turn")]
    TurnOrderViolation { expected: Speaker },
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("case {0} is not approved for training")]
    CaseNotApproved(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextBudget {
    /// Most recent turns kept in the window.
    pub max_turns: usize,
    /// Upper bound on the rendered context. The summary, the persona block
    /// and the latest turn are always kept.
    pub max_chars: usize,
}

impl Default for ContextBudget {
    fn default() -> Self {
        Self {
            max_turns: 20,
            max_chars: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub summary: String,
    pub persona: String,
    /// Indices of the turns included, oldest first.
    pub turn_indices: Vec<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub intent: Option<Intent>,
    pub flags: Vec<FeedbackFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replay {
    pub session_id: String,
    pub case_id: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub entries: Vec<ReplayEntry>,
    pub asked_topics: Vec<String>,
    pub missed_topics: Vec<String>,
}

fn phase_name(phase: u8) -> &'static str {
    match phase {
        0 => "greeting",
        1 => "chief complaint",
        2 => "symptom exploration",
        3 => "history taking",
        4 => "risk assessment",
        _ => "closing",
    }
}

#[derive(Debug)]
pub struct DialogueEngine {
    kb: Arc<KnowledgeBase>,
    lexicon: Arc<Lexicon>,
    templates: Arc<TemplateSet>,
    gateway: Arc<LlmGateway>,
    budget: ContextBudget,
}

impl DialogueEngine {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        lexicon: Arc<Lexicon>,
        templates: Arc<TemplateSet>,
        gateway: Arc<LlmGateway>,
        budget: ContextBudget,
    ) -> Self {
        Self {
            kb,
            lexicon,
            templates,
            gateway,
            budget,
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn budget(&self) -> ContextBudget {
        self.budget
    }

    pub fn open_session(
        &self,
        id: impl Into<String>,
        case: &CaseRecord,
        approved: bool,
        mode: SessionMode,
        seed: u64,
        focus: Option<Dimension>,
    ) -> Result<DialogueSession, DialogueError> {
        if !approved {
            return Err(DialogueError::CaseNotApproved(case.id.clone()));
        }
        let emotion = self
            .kb
            .disorders
            .get(&case.ground_truth_dx)
            .map(|d| d.emotion_profile)
            .unwrap_or(Emotion::Neutral);
        Ok(DialogueSession::new(id, case, emotion, mode, seed, focus))
    }

    pub fn understand(&self, utterance: &str) -> Result<Intent, DialogueError> {
        if utterance.trim().is_empty() {
            return Err(DialogueError::EmptyUtterance);
        }
        Ok(self.lexicon.analyze(utterance).intent)
    }

    /// Appends a doctor turn with its intent and feedback flags.
    pub fn add_doctor_turn(&self, session: &mut DialogueSession, text: &str) -> Result<Turn, DialogueError> {
        if session.status == SessionStatus::Closed {
            return Err(DialogueError::SessionClosed(session.id.clone()));
        }
        if session.last_speaker() == Some(Speaker::Doctor) {
            return Err(DialogueError::TurnOrderViolation {
                expected: Speaker::Patient,
            });
        }
        let intent = self.understand(text)?;
        for topic in &intent.entities {
            if self.kb.symptoms.has_topic(topic) {
                session.asked_topics.insert(topic.clone());
            }
        }
        session.turns.push(Turn {
            index: session.turns.len(),
            speaker: Speaker::Doctor,
            text: text.to_string(),
            intent: Some(intent),
            feedback_flags: Vec::new(),
        });
        let flags = self.analyze_turn(session);
        let turn = session.turns.last_mut().expect("just pushed");
        turn.feedback_flags = flags;
        Ok(turn.clone())
    }

    /// The persona directive: condition, emotional tone and the symptoms at
    /// or above the disclosure threshold.
    pub fn persona_block(&self, session: &DialogueSession, intent: Option<&Intent>) -> String {
        let state = &session.patient_state;
        let mut out = String::from("[PERSONA]\n");
        let _ = writeln!(out, "Condition profile: {}", session.disorder_code);
        let _ = writeln!(out, "Emotional tone: {}", state.emotion);
        let _ = writeln!(out, "Disclosure threshold: {}", state.disclosure_threshold);
        out.push_str("Symptoms you may describe when asked:\n");
        for (tag, severity) in session.disclosed_symptoms() {
            let phrase = self.kb.symptoms.get(tag).map(|d| d.patient_phrase.as_str()).unwrap_or(tag);
            let _ = writeln!(out, "- {phrase} (severity {severity})");
        }
        if let Some(tag) = &state.atypical_symptom {
            let phrase = self.kb.symptoms.get(tag).map(|d| d.patient_phrase.as_str()).unwrap_or(tag);
            let _ = writeln!(out, "Present this one atypically: {phrase}");
        }
        if let Some(intent) = intent {
            if !intent.entities.is_empty() {
                let _ = writeln!(out, "The doctor is asking about: {}", intent.entities.join(", "));
            }
        }
        out.trim_end().to_string()
    }

    pub fn integrate_context(&self, session: &DialogueSession, intent: Option<&Intent>) -> DialogueContext {
        let summary = format!("[CASE SUMMARY]\n{}", session.summary);
        let persona = self.persona_block(session, intent);
        let fixed = summary.len() + persona.len() + "\n\n\n\n[RECENT TURNS]\n".len();

        let start = session.turns.len().saturating_sub(self.budget.max_turns);
        let mut window: Vec<&Turn> = session.turns[start..].iter().collect();
        let line = |t: &Turn| {
            let who = match t.speaker {
                Speaker::Doctor => "Doctor",
                Speaker::Patient => "Patient",
            };
            format!("{who}: {}\n", t.text)
        };
        let mut size = fixed + window.iter().map(|t| line(t).len()).sum::<usize>();
        while window.len() > 1 && size > self.budget.max_chars {
            size -= line(window[0]).len();
            window.remove(0);
        }
        let mut text = format!("{summary}\n\n{persona}\n\n[RECENT TURNS]\n");
        for t in &window {
            text.push_str(&line(t));
        }
        DialogueContext {
            summary,
            persona,
            turn_indices: window.iter().map(|t| t.index).collect(),
            text: text.trim_end().to_string(),
        }
    }

    /// Asks the provider for the patient's answer to the latest doctor turn.
    /// The session is untouched when this fails.
    pub async fn generate_reply(&self, session: &mut DialogueSession) -> Result<Turn, DialogueError> {
        if session.status == SessionStatus::Closed {
            return Err(DialogueError::SessionClosed(session.id.clone()));
        }
        let Some(last) = session.turns.last().filter(|t| t.speaker == Speaker::Doctor) else {
            return Err(DialogueError::TurnOrderViolation {
                expected: Speaker::Doctor,
            });
        };
        let question = last.text.clone();
        let context = self.integrate_context(session, last.intent.as_ref());
        let template = self.templates.get(PATIENT_TEMPLATE)?;
        let prompt = render_prompt(
            template,
            &params([
                ("context", context.text),
                ("emotion", session.patient_state.emotion.to_string()),
                ("question", question),
            ]),
        )?;
        let reply = self.gateway.complete_prompt(prompt).await?;
        let turn = Turn {
            index: session.turns.len(),
            speaker: Speaker::Patient,
            text: reply.text.trim().to_string(),
            intent: None,
            feedback_flags: Vec::new(),
        };
        session.turns.push(turn.clone());
        Ok(turn)
    }

    /// Doctor turn plus patient reply. Nothing is recorded if the reply fails.
    pub async fn exchange(&self, session: &mut DialogueSession, text: &str) -> Result<(Turn, Turn), DialogueError> {
        let before = (session.turns.len(), session.asked_topics.clone());
        let doctor = self.add_doctor_turn(session, text)?;
        match self.generate_reply(session).await {
            Ok(patient) => Ok((doctor, patient)),
            Err(e) => {
                session.turns.truncate(before.0);
                session.asked_topics = before.1;
                Err(e)
            }
        }
    }

    /// Heuristic feedback on the latest doctor turn.
    pub fn analyze_turn(&self, session: &DialogueSession) -> Vec<FeedbackFlag> {
        let Some((pos, turn)) = session
            .turns
            .iter()
            .enumerate()
            .rev()
            .find(|(_, t)| t.speaker == Speaker::Doctor)
        else {
            return Vec::new();
        };
        let Some(intent) = &turn.intent else {
            return Vec::new();
        };
        let earlier: Vec<&Intent> = session.turns[..pos]
            .iter()
            .filter(|t| t.speaker == Speaker::Doctor)
            .filter_map(|t| t.intent.as_ref())
            .collect();
        let mut flags = Vec::new();

        let explored = earlier.iter().any(|i| i.kind == IntentKind::SymptomQuery);
        let reached = earlier.iter().filter_map(|i| i.phase).max().unwrap_or(0);
        if intent.kind == IntentKind::Closing && !explored {
            flags.push(FeedbackFlag {
                category: FlagCategory::Logic,
                code: "out_of_order".into(),
                detail: "Closing the consultation before any symptom was explored.".into(),
                suggestion: "Ask about the presenting symptoms before wrapping up.".into(),
            });
        } else if let Some(phase) = intent.phase.filter(|p| *p > reached + 2) {
            flags.push(FeedbackFlag {
                category: FlagCategory::Logic,
                code: "phase_skip".into(),
                detail: format!("Jumped to {} from {}.", phase_name(phase), phase_name(reached)),
                suggestion: format!("Cover {} before moving on to {}.", phase_name(reached + 1), phase_name(phase)),
            });
        }

        if intent.kind == IntentKind::Other {
            flags.push(FeedbackFlag {
                category: FlagCategory::Professionalism,
                code: "unfocused_question".into(),
                detail: "The question does not target a recognisable clinical topic.".into(),
                suggestion: "Anchor the question to one specific topic, for example sleep or mood.".into(),
            });
        }

        let after_distress = pos
            .checked_sub(1)
            .map(|p| &session.turns[p])
            .is_some_and(|prev| prev.speaker == Speaker::Patient && self.lexicon.analyze(&prev.text).distress_cue);
        if after_distress && !self.lexicon.analyze(&turn.text).empathy_marker {
            flags.push(FeedbackFlag {
                category: FlagCategory::Empathy,
                code: "missed_distress".into(),
                detail: "The patient expressed distress and the reply did not acknowledge it.".into(),
                suggestion: "Acknowledge the feeling first, e.g. \"That sounds really hard.\"".into(),
            });
        }

        if let Some(focus) = session.focus {
            flags.push(self.drill(session, focus));
        }
        flags
    }

    fn drill(&self, session: &DialogueSession, focus: Dimension) -> FeedbackFlag {
        let suggestion = match focus {
            Dimension::ConsultationSkills => match session.missed_topics().first() {
                Some(topic) => format!("Next, cover the {} topic.", topic.replace('_', " ")),
                None => "All required topics are covered; summarise back to the patient.".into(),
            },
            Dimension::ClinicalThinking => "Note which findings so far would change your examination plan.".into(),
            Dimension::DiagnosticAccuracy => "Map what you have heard so far onto the diagnostic criteria.".into(),
            Dimension::MedicationRationality => "Ask about current medication and allergies before prescribing.".into(),
        };
        FeedbackFlag {
            category: FlagCategory::Drill,
            code: format!("drill_{}", focus.as_str()),
            detail: format!("Review focus: {}.", focus.as_str().replace('_', " ")),
            suggestion,
        }
    }

    pub fn close(&self, session: &mut DialogueSession) {
        session.status = SessionStatus::Closed;
    }

    pub fn replay(&self, session: &DialogueSession) -> Replay {
        Replay {
            session_id: session.id.clone(),
            case_id: session.case_id.clone(),
            mode: session.mode,
            status: session.status,
            entries: session
                .turns
                .iter()
                .map(|t| ReplayEntry {
                    index: t.index,
                    speaker: t.speaker,
                    text: t.text.clone(),
                    intent: t.intent.clone(),
                    flags: t.feedback_flags.clone(),
                })
                .collect(),
            asked_topics: session.asked_topics.iter().cloned().collect(),
            missed_topics: session.missed_topics(),
        }
    }
}
