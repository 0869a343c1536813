use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::Intent;
use crate::cases::CaseRecord;
use crate::diagnosis::Emotion;
use crate::evaluation::Dimension;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Standard,
    Challenge,
    Review,
}

impl fmt::Display for SessionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionMode::Standard => "standard",
            SessionMode::Challenge => "challenge",
            SessionMode::Review => "review",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Doctor,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagCategory {
    Logic,
    Professionalism,
    Empathy,
    Drill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackFlag {
    pub category: FlagCategory,
    pub code: String,
    pub detail: String,
    pub suggestion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    /// Doctor turns only.
    pub intent: Option<Intent>,
    pub feedback_flags: Vec<FeedbackFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientState {
    pub emotion: Emotion,
    /// Symptoms below this severity are never disclosed.
    pub disclosure_threshold: u8,
    pub active_symptoms: BTreeMap<String, u8>,
    /// Challenge mode: the symptom the patient presents atypically.
    pub atypical_symptom: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub case_id: String,
    pub disorder_code: String,
    /// One-paragraph case summary the persona is built on.
    pub summary: String,
    pub mode: SessionMode,
    pub seed: u64,
    pub turns: Vec<Turn>,
    pub patient_state: PatientState,
    pub asked_topics: BTreeSet<String>,
    pub required_topics: Vec<String>,
    pub status: SessionStatus,
    /// Review mode only: the weakest dimension from earlier evaluations.
    pub focus: Option<Dimension>,
    pub notices: Vec<String>,
}

pub const STANDARD_THRESHOLD: u8 = 1;

pub fn case_summary(case: &CaseRecord) -> String {
    let d = &case.demographics;
    format!(
        "{}-year-old {} {}. Chief complaint: {}",
        d.age,
        d.sex,
        if d.occupation.is_empty() { "patient" } else { d.occupation.as_str() },
        case.chief_complaint
    )
}

impl DialogueSession {
    /// Builds the initial state for `case`. Review mode without a focus
    /// dimension behaves like standard mode.
    pub fn new(
        id: impl Into<String>,
        case: &CaseRecord,
        emotion: Emotion,
        mode: SessionMode,
        seed: u64,
        focus: Option<Dimension>,
    ) -> Self {
        let mut notices = Vec::new();
        let threshold = match mode {
            SessionMode::Challenge => STANDARD_THRESHOLD + 1,
            _ => STANDARD_THRESHOLD,
        };
        let active: BTreeMap<String, u8> = case
            .symptoms
            .iter()
            .map(|s| (s.tag.clone(), s.severity))
            .collect();
        let atypical_symptom = match mode {
            SessionMode::Challenge => {
                let eligible: Vec<&String> = active.iter().filter(|(_, sev)| **sev >= threshold).map(|(t, _)| t).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                eligible.choose(&mut rng).map(|t| t.to_string())
            }
            _ => None,
        };
        let focus = match (mode, focus) {
            (SessionMode::Review, Some(f)) => Some(f),
            (SessionMode::Review, None) => {
                let notice = "no prior evaluations; review mode runs as standard".to_string();
                tracing::info!(case = %case.id, "{notice}");
                notices.push(notice);
                None
            }
            _ => None,
        };
        Self {
            id: id.into(),
            case_id: case.id.clone(),
            disorder_code: case.ground_truth_dx.clone(),
            summary: case_summary(case),
            mode,
            seed,
            turns: Vec::new(),
            patient_state: PatientState {
                emotion,
                disclosure_threshold: threshold,
                active_symptoms: active,
                atypical_symptom,
            },
            asked_topics: BTreeSet::new(),
            required_topics: case.required_topics.clone(),
            status: SessionStatus::Open,
            focus,
            notices,
        }
    }

    pub fn last_speaker(&self) -> Option<Speaker> {
        self.turns.last().map(|t| t.speaker)
    }

    /// Symptoms the persona may talk about.
    pub fn disclosed_symptoms(&self) -> impl Iterator<Item = (&str, u8)> {
        let threshold = self.patient_state.disclosure_threshold;
        self.patient_state
            .active_symptoms
            .iter()
            .filter(move |(_, sev)| **sev >= threshold)
            .map(|(t, s)| (t.as_str(), *s))
    }

    pub fn missed_topics(&self) -> Vec<String> {
        self.required_topics
            .iter()
            .filter(|t| !self.asked_topics.contains(*t))
            .cloned()
            .collect()
    }

    pub fn doctor_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Doctor)
    }

    pub fn flag_count(&self, category: FlagCategory) -> usize {
        self.turns
            .iter()
            .flat_map(|t| &t.feedback_flags)
            .filter(|f| f.category == category)
            .count()
    }
}
