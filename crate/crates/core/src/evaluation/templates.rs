use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use thiserror::Error;

use crate::kb::{self, KbError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unknown feedback template {0}")]
    Unknown(String),
    #[error("template {id} needs slot {slot}")]
    MissingSlot { id: String, slot: String },
    #[error("template {id} has no slot {slot}")]
    ExtraSlot { id: String, slot: String },
}

/// Feedback texts keyed by id, with `{slot}` placeholders.
#[derive(Debug, Clone)]
pub struct FeedbackTemplates {
    texts: BTreeMap<String, String>,
    slots: BTreeMap<String, BTreeSet<String>>,
}

fn slot_regex() -> Regex {
    Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex")
}

impl FeedbackTemplates {
    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let texts: BTreeMap<String, String> = kb::parse_json("feedback_templates.json", text)?;
        let re = slot_regex();
        let slots = texts
            .iter()
            .map(|(id, t)| (id.clone(), re.captures_iter(t).map(|c| c[1].to_string()).collect()))
            .collect();
        Ok(Self { texts, slots })
    }

    pub fn seed() -> Self {
        Self::from_json(kb::seed::FEEDBACK_TEMPLATES).expect("seed feedback templates are valid")
    }

    pub fn slots(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.slots.get(id)
    }

    /// Fills every slot; the slot set must match the template exactly.
    pub fn fill(&self, id: &str, values: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        let text = self.texts.get(id).ok_or_else(|| TemplateError::Unknown(id.to_string()))?;
        let wanted = &self.slots[id];
        if let Some(slot) = wanted.iter().find(|s| !values.contains_key(*s)) {
            return Err(TemplateError::MissingSlot {
                id: id.into(),
                slot: slot.clone(),
            });
        }
        if let Some(slot) = values.keys().find(|k| !wanted.contains(*k)) {
            return Err(TemplateError::ExtraSlot {
                id: id.into(),
                slot: slot.clone(),
            });
        }
        Ok(slot_regex()
            .replace_all(text, |c: &regex::Captures<'_>| values[&c[1]].clone())
            .into_owned())
    }
}
