//! Criteria-based diagnostic reasoning.
//!
//! Each disorder is a set of criterion symptoms with a minimum count, a
//! minimum episode duration and exclusion symptoms. Hypotheses are ranked by
//! (eligible, coverage, prevalence weight, code). Model-generated commentary
//! can be attached to a ranking but never changes it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::RegexBuilder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbError, SymptomInstance};
use crate::prescription::PharmacyKb;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiagnosisError {
    #[error("unknown disorder {0}")]
    UnknownDisorder(String),
    #[error("no treatment guideline for {0}")]
    NoGuideline(String),
}

/// Persona emotion a disorder presents with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emotion {
    Low,
    Anxious,
    Flat,
    Agitated,
    Neutral,
}

impl Emotion {
    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Low => "low",
            Emotion::Anxious => "anxious",
            Emotion::Flat => "flat",
            Emotion::Agitated => "agitated",
            Emotion::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderCriteria {
    pub disorder_code: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub criterion_tags: Vec<String>,
    /// Tags that case generation never drops when simplifying a presentation.
    #[serde(default)]
    pub core_tags: Vec<String>,
    pub min_required: usize,
    /// Weeks.
    pub min_duration: u32,
    #[serde(default)]
    pub exclusion_tags: BTreeSet<String>,
    pub prevalence_weight: f64,
    pub emotion_profile: Emotion,
    #[serde(default)]
    pub first_line_drugs: Vec<String>,
    #[serde(default)]
    pub tcm_options: Vec<String>,
    #[serde(default)]
    pub non_drug_notes: Vec<String>,
    #[serde(default)]
    pub required_topics: Vec<String>,
    #[serde(default)]
    pub reference_exams: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DisorderKb {
    disorders: BTreeMap<String, DisorderCriteria>,
}

impl DisorderKb {
    pub fn new(entries: Vec<DisorderCriteria>) -> Result<Self, KbError> {
        const FILE: &str = "disorders.json";
        let mut disorders = BTreeMap::new();
        for d in entries {
            let distinct: BTreeSet<&String> = d.criterion_tags.iter().collect();
            if distinct.len() != d.criterion_tags.len() {
                return Err(KbError::invalid(FILE, format!("{} repeats a criterion tag", d.disorder_code)));
            }
            if d.min_required > d.criterion_tags.len() {
                return Err(KbError::invalid(
                    FILE,
                    format!("{}: min_required exceeds criterion count", d.disorder_code),
                ));
            }
            if !(0.0..=1.0).contains(&d.prevalence_weight) {
                return Err(KbError::invalid(FILE, format!("{}: prevalence_weight outside [0,1]", d.disorder_code)));
            }
            if let Some(core) = d.core_tags.iter().find(|t| !d.criterion_tags.contains(t)) {
                return Err(KbError::invalid(FILE, format!("{}: core tag {core} is not a criterion", d.disorder_code)));
            }
            if disorders.contains_key(&d.disorder_code) {
                return Err(KbError::invalid(FILE, format!("duplicate disorder {}", d.disorder_code)));
            }
            disorders.insert(d.disorder_code.clone(), d);
        }
        Ok(Self { disorders })
    }

    pub fn get(&self, code: &str) -> Option<&DisorderCriteria> {
        self.disorders.get(code)
    }

    pub fn require(&self, code: &str) -> Result<&DisorderCriteria, DiagnosisError> {
        self.get(code).ok_or_else(|| DiagnosisError::UnknownDisorder(code.to_string()))
    }

    /// Disorders in code order.
    pub fn iter(&self) -> impl Iterator<Item = &DisorderCriteria> {
        self.disorders.values()
    }

    pub fn len(&self) -> usize {
        self.disorders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disorders.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisHypothesis {
    pub disorder_code: String,
    /// Matched criterion tags over all criterion tags.
    pub coverage: f64,
    pub eligible: bool,
    pub matched_tags: Vec<String>,
    pub missing_tags: Vec<String>,
    pub duration_met: bool,
    pub exclusions_present: Vec<String>,
    pub prevalence_weight: f64,
}

fn score(d: &DisorderCriteria, findings: &BTreeMap<&str, u32>) -> DiagnosisHypothesis {
    let (matched, missing): (Vec<&String>, Vec<&String>) =
        d.criterion_tags.iter().partition(|t| findings.contains_key(t.as_str()));
    let longest = matched.iter().filter_map(|t| findings.get(t.as_str())).max().copied();
    let duration_met = longest.is_some_and(|w| w >= d.min_duration);
    let exclusions_present: Vec<String> = d
        .exclusion_tags
        .iter()
        .filter(|t| findings.contains_key(t.as_str()))
        .cloned()
        .collect();
    let eligible = matched.len() >= d.min_required && duration_met && exclusions_present.is_empty();
    DiagnosisHypothesis {
        disorder_code: d.disorder_code.clone(),
        coverage: if d.criterion_tags.is_empty() {
            0.0
        } else {
            matched.len() as f64 / d.criterion_tags.len() as f64
        },
        eligible,
        matched_tags: matched.into_iter().cloned().collect(),
        missing_tags: missing.into_iter().cloned().collect(),
        duration_met,
        exclusions_present,
        prevalence_weight: d.prevalence_weight,
    }
}

fn rank_order(a: &DiagnosisHypothesis, b: &DiagnosisHypothesis) -> Ordering {
    b.eligible
        .cmp(&a.eligible)
        .then_with(|| b.coverage.total_cmp(&a.coverage))
        .then_with(|| b.prevalence_weight.total_cmp(&a.prevalence_weight))
        .then_with(|| a.disorder_code.cmp(&b.disorder_code))
}

/// Scores every disorder against the findings and ranks the hypotheses.
///
/// A tag reported more than once counts once, with its longest onset.
pub fn match_criteria(findings: &[SymptomInstance], kb: &DisorderKb) -> Vec<DiagnosisHypothesis> {
    let mut present: BTreeMap<&str, u32> = BTreeMap::new();
    for f in findings {
        let weeks = present.entry(f.tag.as_str()).or_insert(0);
        *weeks = (*weeks).max(f.onset_weeks);
    }
    let mut ranked: Vec<_> = kb.iter().map(|d| score(d, &present)).collect();
    ranked.sort_by(rank_order);
    ranked
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistinguishingFeature {
    pub tag: String,
    pub supports: String,
    /// Whether the patient has this finding.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferentialPair {
    pub first: String,
    pub second: String,
    pub distinguishing: Vec<DistinguishingFeature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferentialReport {
    pub disorders: Vec<String>,
    pub pairs: Vec<DifferentialPair>,
}

/// Distinguishing features for every pair of hypotheses: the symmetric
/// difference of their criterion sets, each tag labelled with the disorder
/// it supports.
pub fn differential(hypotheses: &[DiagnosisHypothesis], kb: &DisorderKb) -> DifferentialReport {
    let known: Vec<(&DiagnosisHypothesis, &DisorderCriteria)> = hypotheses
        .iter()
        .filter_map(|h| kb.get(&h.disorder_code).map(|d| (h, d)))
        .collect();
    let mut pairs = Vec::new();
    for (i, (ha, da)) in known.iter().enumerate() {
        for (hb, db) in &known[i + 1..] {
            let set_a: BTreeSet<&String> = da.criterion_tags.iter().collect();
            let set_b: BTreeSet<&String> = db.criterion_tags.iter().collect();
            let mut distinguishing = Vec::new();
            for tag in set_a.difference(&set_b) {
                distinguishing.push(DistinguishingFeature {
                    tag: (*tag).clone(),
                    supports: da.disorder_code.clone(),
                    present: ha.matched_tags.contains(tag),
                });
            }
            for tag in set_b.difference(&set_a) {
                distinguishing.push(DistinguishingFeature {
                    tag: (*tag).clone(),
                    supports: db.disorder_code.clone(),
                    present: hb.matched_tags.contains(tag),
                });
            }
            pairs.push(DifferentialPair {
                first: da.disorder_code.clone(),
                second: db.disorder_code.clone(),
                distinguishing,
            });
        }
    }
    DifferentialReport {
        disorders: known.iter().map(|(h, _)| h.disorder_code.clone()).collect(),
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendedDrug {
    pub drug_id: String,
    pub rationale: String,
    pub adverse_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentRecommendation {
    pub disorder_code: String,
    pub drugs: Vec<RecommendedDrug>,
    pub non_drug_notes: Vec<String>,
}

pub fn recommend_treatment(
    dx: &str,
    disorders: &DisorderKb,
    pharmacy: &PharmacyKb,
    include_tcm: bool,
) -> Result<TreatmentRecommendation, DiagnosisError> {
    let d = disorders.require(dx)?;
    let tcm: &[String] = if include_tcm { &d.tcm_options } else { &[] };
    if d.first_line_drugs.is_empty() && tcm.is_empty() {
        return Err(DiagnosisError::NoGuideline(dx.to_string()));
    }
    let first_line = d
        .first_line_drugs
        .iter()
        .map(|id| (id, format!("first-line treatment for {}", d.name)));
    let natural = tcm
        .iter()
        .map(|id| (id, format!("natural-product option for {}", d.name)));
    let drugs = first_line
        .chain(natural)
        .filter_map(|(id, rationale)| {
            // disorder/drug references are cross-checked when the KB loads
            pharmacy.drug(id).map(|entry| RecommendedDrug {
                drug_id: id.clone(),
                rationale,
                adverse_warnings: entry.adverse_warnings.clone(),
            })
        })
        .collect();
    Ok(TreatmentRecommendation {
        disorder_code: d.disorder_code.clone(),
        drugs,
        non_drug_notes: d.non_drug_notes.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionStatus {
    /// The model named the top-ranked eligible disorder.
    Agreement,
    /// Eligible under the criteria, but not ranked first.
    SupportedAlternative,
    UnsupportedByCriteria,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmMention {
    pub disorder_code: String,
    pub status: MentionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSuggestion {
    /// The rule ranking, exactly as computed.
    pub ranking: Vec<DiagnosisHypothesis>,
    pub advisory_narrative: Option<String>,
    pub mentions: Vec<LlmMention>,
    pub agreement: bool,
    pub notice: Option<String>,
}

fn mentioned(text: &str, d: &DisorderCriteria) -> bool {
    let code = RegexBuilder::new(&format!(r"\b{}\b", regex::escape(&d.disorder_code)))
        .build()
        .expect("escaped code is a valid regex");
    if code.is_match(text) {
        return true;
    }
    std::iter::once(&d.name).chain(&d.aliases).any(|name| {
        RegexBuilder::new(&format!(r"\b{}\b", regex::escape(name)))
            .case_insensitive(true)
            .build()
            .expect("escaped name is a valid regex")
            .is_match(text)
    })
}

/// Attaches model commentary to a rule ranking. The ranking is copied
/// unchanged; disorders the model names are labelled against it.
pub fn merge_llm_suggestion(rule_result: &[DiagnosisHypothesis], llm_text: &str, kb: &DisorderKb) -> DiagnosticSuggestion {
    let ranking = rule_result.to_vec();
    let text = llm_text.trim();
    if text.is_empty() {
        return DiagnosticSuggestion {
            ranking,
            advisory_narrative: None,
            mentions: Vec::new(),
            agreement: false,
            notice: Some("no model suggestion available; criteria-based ranking only".into()),
        };
    }
    let top = ranking.first().filter(|h| h.eligible).map(|h| h.disorder_code.as_str());
    let mentions: Vec<LlmMention> = kb
        .iter()
        .filter(|d| mentioned(text, d))
        .map(|d| {
            let eligible = ranking.iter().any(|h| h.disorder_code == d.disorder_code && h.eligible);
            let status = if Some(d.disorder_code.as_str()) == top {
                MentionStatus::Agreement
            } else if eligible {
                MentionStatus::SupportedAlternative
            } else {
                MentionStatus::UnsupportedByCriteria
            };
            LlmMention {
                disorder_code: d.disorder_code.clone(),
                status,
            }
        })
        .collect();
    let agreement = mentions.iter().any(|m| m.status == MentionStatus::Agreement);
    let notice = mentions
        .iter()
        .any(|m| m.status == MentionStatus::UnsupportedByCriteria)
        .then(|| "the model named disorders that are unsupported by criteria".to_string());
    DiagnosticSuggestion {
        ranking,
        advisory_narrative: Some(text.to_string()),
        mentions,
        agreement,
        notice,
    }
}
