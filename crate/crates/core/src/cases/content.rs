//! Strict parsing of fenced JSON blocks in model replies.

use serde::Deserialize;
use thiserror::Error;

use super::model::{Demographics, History, SymptomInstance};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContentError {
    #[error("no ```{0} block in reply")]
    Missing(String),
    #[error("more than one ```{0} block in reply")]
    Ambiguous(String),
    #[error("unterminated ```{0} block")]
    Unterminated(String),
    #[error("block is not valid: {0}")]
    Invalid(String),
}

/// Body of the single fenced block labelled `label`.
pub fn fenced_block<'a>(text: &'a str, label: &str) -> Result<&'a str, ContentError> {
    let open = format!("```{label}");
    let mut found = None;
    let mut rest = text;
    let mut offset = 0;
    while let Some(pos) = rest.find(&open) {
        let after = &rest[pos + open.len()..];
        // "```cases" is not a "```case" block.
        if after.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
            offset += pos + open.len();
            rest = &text[offset..];
            continue;
        }
        let Some(end) = after.find("```") else {
            return Err(ContentError::Unterminated(label.into()));
        };
        if found.is_some() {
            return Err(ContentError::Ambiguous(label.into()));
        }
        found = Some(after[..end].trim());
        offset += pos + open.len() + end + 3;
        rest = &text[offset..];
    }
    found.ok_or_else(|| ContentError::Missing(label.into()))
}

/// Fields the content stage fills in. Clinical lists are optional; the
/// framework's choices stand when they are absent.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseContent {
    pub demographics: Demographics,
    pub chief_complaint: String,
    pub history: History,
    pub mental_status: String,
    #[serde(default)]
    pub symptoms: Option<Vec<SymptomInstance>>,
    #[serde(default)]
    pub required_topics: Option<Vec<String>>,
    #[serde(default)]
    pub reference_exams: Option<Vec<String>>,
    #[serde(default)]
    pub reference_rx: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleContent {
    pub chief_complaint: String,
    pub mental_status: String,
}

pub fn parse_case_content(reply: &str) -> Result<CaseContent, ContentError> {
    let body = fenced_block(reply, "case")?;
    serde_json::from_str(body).map_err(|e| ContentError::Invalid(e.to_string()))
}

pub fn parse_style_content(reply: &str) -> Result<StyleContent, ContentError> {
    let body = fenced_block(reply, "style")?;
    serde_json::from_str(body).map_err(|e| ContentError::Invalid(e.to_string()))
}
