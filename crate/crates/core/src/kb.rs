//! Knowledge bases: symptom lexicon, disorder criteria, examinations and the
//! pharmacy tables. Everything is loaded from JSON files and is immutable
//! afterwards; the seed files ship embedded in the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::{DisorderCriteria, DisorderKb};
use crate::exams::{ExamItem, ExamKb};
use crate::prescription::{DrugEntry, InteractionEntry, PharmacyKb, TimingConflict};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {file}: {source}")]
    Parse {
        file: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid entry in {file}: {detail}")]
    Invalid { file: String, detail: String },
}

impl KbError {
    pub(crate) fn invalid(file: &str, detail: impl Into<String>) -> Self {
        KbError::Invalid {
            file: file.to_string(),
            detail: detail.into(),
        }
    }
}

/// Embedded copies of the shipped data files.
pub mod seed {
    pub const SYMPTOMS: &str = include_str!("../data/kb/symptoms.json");
    pub const DISORDERS: &str = include_str!("../data/kb/disorders.json");
    pub const EXAMS: &str = include_str!("../data/kb/exams.json");
    pub const DRUGS: &str = include_str!("../data/kb/drugs.json");
    pub const INTERACTIONS: &str = include_str!("../data/kb/interactions.json");
    pub const TIMING_CONFLICTS: &str = include_str!("../data/kb/timing_conflicts.json");
    pub const LEXICON: &str = include_str!("../data/kb/lexicon.json");
    pub const VALIDATION_RULES: &str = include_str!("../data/kb/validation_rules.json");
    pub const PROMPTS: &str = include_str!("../data/kb/prompts.json");
    pub const FEEDBACK_TEMPLATES: &str = include_str!("../data/kb/feedback_templates.json");
    pub const DEMO_SCRIPT: &str = include_str!("../data/scripts/demo_script.json");

    pub const CASES: &[(&str, &str)] = &[
        ("seed-mdd-001.json", include_str!("../data/cases/seed-mdd-001.json")),
        ("seed-mdd-002.json", include_str!("../data/cases/seed-mdd-002.json")),
        ("seed-gad-001.json", include_str!("../data/cases/seed-gad-001.json")),
        ("seed-pd-001.json", include_str!("../data/cases/seed-pd-001.json")),
        ("seed-scz-001.json", include_str!("../data/cases/seed-scz-001.json")),
        ("seed-bp1-001.json", include_str!("../data/cases/seed-bp1-001.json")),
    ];
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(file: &str, text: &str) -> Result<T, KbError> {
    serde_json::from_str(text).map_err(|source| KbError::Parse {
        file: file.to_string(),
        source,
    })
}

/// Reads `name` from `dir` when given, otherwise returns the embedded seed copy.
pub fn read_data_file(dir: Option<&Path>, name: &str, fallback: &str) -> Result<String, KbError> {
    match dir {
        Some(dir) => {
            let path = dir.join(name);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| KbError::Io {
                    file: path.display().to_string(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        }
        None => Ok(fallback.to_string()),
    }
}

/// One symptom as it presents in a patient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymptomInstance {
    pub tag: String,
    /// 0 (subclinical) to 3 (severe).
    pub severity: u8,
    pub onset_weeks: u32,
    #[serde(default)]
    pub atypical: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomDef {
    pub tag: String,
    pub category: String,
    /// Consultation topic under which a clinician would elicit this symptom.
    pub topic: String,
    pub patient_phrase: String,
    pub clinical_term: String,
}

#[derive(Debug, Clone, Default)]
pub struct SymptomLexicon {
    topics: BTreeSet<String>,
    symptoms: BTreeMap<String, SymptomDef>,
}

#[derive(Deserialize)]
struct SymptomFile {
    topics: Vec<String>,
    symptoms: Vec<SymptomDef>,
}

impl SymptomLexicon {
    pub fn from_json(text: &str) -> Result<Self, KbError> {
        const FILE: &str = "symptoms.json";
        let raw: SymptomFile = parse_json(FILE, text)?;
        let topics: BTreeSet<String> = raw.topics.into_iter().collect();
        let mut symptoms = BTreeMap::new();
        for def in raw.symptoms {
            if !topics.contains(&def.topic) {
                return Err(KbError::invalid(
                    FILE,
                    format!("symptom {} uses unknown topic {}", def.tag, def.topic),
                ));
            }
            if symptoms.insert(def.tag.clone(), def.clone()).is_some() {
                return Err(KbError::invalid(FILE, format!("duplicate symptom tag {}", def.tag)));
            }
        }
        Ok(Self { topics, symptoms })
    }

    pub fn get(&self, tag: &str) -> Option<&SymptomDef> {
        self.symptoms.get(tag)
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.symptoms.contains_key(tag)
    }

    pub fn has_topic(&self, topic: &str) -> bool {
        self.topics.contains(topic)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(String::as_str)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.symptoms.keys().map(String::as_str)
    }

    pub fn category_of(&self, tag: &str) -> Option<&str> {
        self.symptoms.get(tag).map(|d| d.category.as_str())
    }
}

/// The clinical knowledge bases as one immutable bundle.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub symptoms: SymptomLexicon,
    pub disorders: DisorderKb,
    pub exams: ExamKb,
    pub pharmacy: PharmacyKb,
}

impl KnowledgeBase {
    /// The knowledge base compiled into the crate.
    pub fn seed() -> Self {
        Self::load(None).expect("embedded seed knowledge base is valid")
    }

    /// Loads every KB file from `dir`, falling back to the embedded copy for
    /// files the directory does not provide.
    pub fn load(dir: Option<&Path>) -> Result<Self, KbError> {
        let symptoms = SymptomLexicon::from_json(&read_data_file(dir, "symptoms.json", seed::SYMPTOMS)?)?;
        let disorders: Vec<DisorderCriteria> =
            parse_json("disorders.json", &read_data_file(dir, "disorders.json", seed::DISORDERS)?)?;
        let exams: Vec<ExamItem> = parse_json("exams.json", &read_data_file(dir, "exams.json", seed::EXAMS)?)?;
        let drugs: Vec<DrugEntry> = parse_json("drugs.json", &read_data_file(dir, "drugs.json", seed::DRUGS)?)?;
        let interactions: Vec<InteractionEntry> = parse_json(
            "interactions.json",
            &read_data_file(dir, "interactions.json", seed::INTERACTIONS)?,
        )?;
        let timing: Vec<TimingConflict> = parse_json(
            "timing_conflicts.json",
            &read_data_file(dir, "timing_conflicts.json", seed::TIMING_CONFLICTS)?,
        )?;

        let disorders = DisorderKb::new(disorders)?;
        let exams = ExamKb::new(exams)?;
        let pharmacy = PharmacyKb::new(drugs, interactions, timing)?;
        let kb = Self {
            symptoms,
            disorders,
            exams,
            pharmacy,
        };
        kb.cross_check()?;
        Ok(kb)
    }

    fn cross_check(&self) -> Result<(), KbError> {
        for d in self.disorders.iter() {
            for tag in d.criterion_tags.iter().chain(&d.exclusion_tags).chain(&d.core_tags) {
                if !self.symptoms.contains(tag) {
                    return Err(KbError::invalid(
                        "disorders.json",
                        format!("{} references unknown symptom {tag}", d.disorder_code),
                    ));
                }
            }
            for drug in d.first_line_drugs.iter().chain(&d.tcm_options) {
                if self.pharmacy.drug(drug).is_none() {
                    return Err(KbError::invalid(
                        "disorders.json",
                        format!("{} references unknown drug {drug}", d.disorder_code),
                    ));
                }
            }
            for exam in &d.reference_exams {
                if self.exams.get(exam).is_none() {
                    return Err(KbError::invalid(
                        "disorders.json",
                        format!("{} references unknown exam {exam}", d.disorder_code),
                    ));
                }
            }
            for topic in &d.required_topics {
                if !self.symptoms.has_topic(topic) {
                    return Err(KbError::invalid(
                        "disorders.json",
                        format!("{} references unknown topic {topic}", d.disorder_code),
                    ));
                }
            }
        }
        for item in self.exams.iter() {
            for tag in &item.relevant_symptom_tags {
                if !self.symptoms.contains(tag) {
                    return Err(KbError::invalid(
                        "exams.json",
                        format!("{} references unknown symptom {tag}", item.code),
                    ));
                }
            }
            for dx in &item.relevant_disorders {
                if self.disorders.get(dx).is_none() {
                    return Err(KbError::invalid(
                        "exams.json",
                        format!("{} references unknown disorder {dx}", item.code),
                    ));
                }
            }
        }
        Ok(())
    }
}
