use std::collections::BTreeSet;
use std::fmt;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::kb::{self, KbError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    Greeting,
    SymptomQuery,
    HistoryExploration,
    PsychologicalAssessment,
    RiskAssessment,
    Closing,
    Other,
}

impl fmt::Display for IntentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    /// Canonical topic tags, sorted.
    pub entities: Vec<String>,
    /// Consultation phase of the winning pattern: 0 greeting, 1 chief
    /// complaint, 2 symptoms, 3 histories, 4 risk, 5 closing.
    pub phase: Option<u8>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawEntry {
    pattern: String,
    kind: Option<IntentKind>,
    #[serde(default)]
    entities: Vec<String>,
    phase: Option<u8>,
    #[serde(default)]
    distress_cue: bool,
    #[serde(default)]
    empathy_marker: bool,
}

#[derive(Debug, Deserialize)]
struct RawLexicon {
    kind_precedence: Vec<IntentKind>,
    entries: Vec<RawEntry>,
}

#[derive(Debug, Clone)]
struct Entry {
    regex: Regex,
    kind: Option<IntentKind>,
    entities: Vec<String>,
    phase: Option<u8>,
    distress_cue: bool,
    empathy_marker: bool,
}

/// Everything the lexicon recognises in one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconMatch {
    pub intent: Intent,
    pub distress_cue: bool,
    pub empathy_marker: bool,
    /// Number of intent-bearing patterns that matched.
    pub hits: usize,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    precedence: Vec<IntentKind>,
    entries: Vec<Entry>,
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, KbError> {
        const FILE: &str = "lexicon.json";
        let raw: RawLexicon = kb::parse_json(FILE, text)?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for e in raw.entries {
            let regex = RegexBuilder::new(&e.pattern)
                .case_insensitive(true)
                .build()
                .map_err(|err| KbError::invalid(FILE, format!("pattern {:?}: {err}", e.pattern)))?;
            if let Some(kind) = e.kind {
                if !raw.kind_precedence.contains(&kind) {
                    return Err(KbError::invalid(FILE, format!("kind {kind} missing from kind_precedence")));
                }
                if e.phase.is_none() {
                    return Err(KbError::invalid(FILE, format!("pattern {:?} has a kind but no phase", e.pattern)));
                }
            }
            entries.push(Entry {
                regex,
                kind: e.kind,
                entities: e.entities,
                phase: e.phase,
                distress_cue: e.distress_cue,
                empathy_marker: e.empathy_marker,
            });
        }
        Ok(Self {
            precedence: raw.kind_precedence,
            entries,
        })
    }

    pub fn seed() -> Self {
        Self::from_json(kb::seed::LEXICON).expect("seed lexicon is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every entity tag the lexicon can emit.
    pub fn entity_tags(&self) -> BTreeSet<&str> {
        self.entries.iter().flat_map(|e| e.entities.iter().map(String::as_str)).collect()
    }

    /// The intent kind is the highest-precedence kind among matching
    /// patterns; entities are the union over all matching patterns.
    pub fn analyze(&self, utterance: &str) -> LexiconMatch {
        let mut kinds = BTreeSet::new();
        let mut entities = BTreeSet::new();
        let mut distress_cue = false;
        let mut empathy_marker = false;
        let mut matched = Vec::new();
        for e in &self.entries {
            if !e.regex.is_match(utterance) {
                continue;
            }
            distress_cue |= e.distress_cue;
            empathy_marker |= e.empathy_marker;
            entities.extend(e.entities.iter().cloned());
            if let Some(kind) = e.kind {
                kinds.insert(kind);
                matched.push(e);
            }
        }
        let kind = self
            .precedence
            .iter()
            .find(|k| kinds.contains(*k))
            .copied()
            .unwrap_or(IntentKind::Other);
        let phase = matched.iter().filter(|e| e.kind == Some(kind)).filter_map(|e| e.phase).min();
        LexiconMatch {
            intent: Intent {
                kind,
                entities: entities.into_iter().collect(),
                phase,
            },
            distress_cue,
            empathy_marker,
            hits: matched.len(),
        }
    }
}
