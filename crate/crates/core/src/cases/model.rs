use serde::{Deserialize, Serialize};

use crate::kb::{self, KbError};
pub use crate::kb::SymptomInstance;

/// Current case document schema.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    /// Years. Signed so that malformed drafts still deserialize and fail
    /// validation instead of parsing.
    pub age: i64,
    pub sex: String,
    pub occupation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct History {
    pub present_illness: String,
    pub past: String,
    pub family: String,
    pub personal: String,
}

/// A complete virtual case. Every field defaults so that a partially filled
/// generation draft is still a `CaseRecord`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseRecord {
    pub id: String,
    pub disorder_code: String,
    pub difficulty: i64,
    pub demographics: Demographics,
    pub chief_complaint: String,
    pub history: History,
    pub symptoms: Vec<SymptomInstance>,
    pub mental_status: String,
    pub ground_truth_dx: String,
    pub required_topics: Vec<String>,
    pub reference_exams: Vec<String>,
    pub reference_rx: Vec<String>,
}

impl CaseRecord {
    pub fn symptom_tags(&self) -> impl Iterator<Item = &str> {
        self.symptoms.iter().map(|s| s.tag.as_str())
    }

    pub fn has_symptom(&self, tag: &str) -> bool {
        self.symptoms.iter().any(|s| s.tag == tag)
    }
}

/// On-disk form of a case, one per file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub expert_approved: bool,
    pub case: CaseRecord,
}

impl CaseDocument {
    pub fn new(case: CaseRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            expert_approved: false,
            case,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let doc: CaseDocument = kb::parse_json("case document", text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(KbError::invalid(
                "case document",
                format!("unsupported schema_version {}", doc.schema_version),
            ));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case documents always serialize")
    }
}

/// The expert-approved cases shipped with the crate.
pub fn seed_cases() -> Vec<CaseDocument> {
    kb::seed::CASES
        .iter()
        .map(|(name, text)| CaseDocument::from_json(text).unwrap_or_else(|e| panic!("seed case {name}: {e}")))
        .collect()
}
