//! Prescription drafting and static safety gating.
//!
//! A draft is checked for drug interactions, dose range, dosing-slot timing
//! conflicts and patient contraindications. The verdict is derived from the
//! findings alone; model commentary is stored next to it as advisory text.

mod checks;
mod kb;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::DisorderKb;
use crate::gateway::{params, render_prompt, LlmGateway, TemplateSet};

pub use checks::{check_contraindications, check_interactions, check_timing, verify_dosage, FindingKind, SafetyFinding};
pub use kb::{DrugEntry, InteractionEntry, PharmacyKb, Severity, TimingConflict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrescriptionError {
    #[error("unknown drug {0}")]
    UnknownDrug(String),
    #[error("unknown disorder {0}")]
    UnknownDisorder(String),
    #[error("no treatment guideline for {0}")]
    NoGuideline(String),
    #[error("invalid draft: {0}")]
    InvalidDraft(String),
}

/// Daily dosing slots a line can be scheduled in.
pub const SLOTS: [&str; 4] = ["morning", "noon", "evening", "bedtime"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionLine {
    pub drug_id: String,
    /// Units per day, in the drug's KB unit.
    pub dose: f64,
    pub slots: Vec<String>,
}

impl PrescriptionLine {
    pub fn new(drug_id: impl Into<String>, dose: f64, slots: &[&str]) -> Self {
        Self {
            drug_id: drug_id.into(),
            dose,
            slots: slots.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionDraft {
    pub id: String,
    pub case_ref: String,
    pub dx: String,
    pub lines: Vec<PrescriptionLine>,
    pub round: u32,
    #[serde(default)]
    pub advisory: Option<String>,
}

impl PrescriptionDraft {
    pub fn new(id: impl Into<String>, case_ref: impl Into<String>, dx: impl Into<String>, lines: Vec<PrescriptionLine>) -> Self {
        Self {
            id: id.into(),
            case_ref: case_ref.into(),
            dx: dx.into(),
            lines,
            round: 1,
            advisory: None,
        }
    }

    pub fn validate(&self) -> Result<(), PrescriptionError> {
        if self.lines.is_empty() {
            return Err(PrescriptionError::InvalidDraft("no lines".into()));
        }
        for line in &self.lines {
            if !(line.dose > 0.0 && line.dose.is_finite()) {
                return Err(PrescriptionError::InvalidDraft(format!("{}: dose must be positive", line.drug_id)));
            }
            if line.slots.is_empty() {
                return Err(PrescriptionError::InvalidDraft(format!("{}: no schedule slot", line.drug_id)));
            }
            if let Some(bad) = line.slots.iter().find(|s| !SLOTS.contains(&s.as_str())) {
                return Err(PrescriptionError::InvalidDraft(format!("{}: unknown slot {bad}", line.drug_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewPolicy {
    /// Lowest severity that blocks a draft.
    pub block_at: Severity,
}

impl Default for ReviewPolicy {
    fn default() -> Self {
        Self { block_at: Severity::Major }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionReview {
    pub draft_id: String,
    pub round: u32,
    pub findings: Vec<SafetyFinding>,
    pub verdict: Verdict,
}

impl PrescriptionReview {
    pub fn is_blocked(&self) -> bool {
        self.verdict == Verdict::Blocked
    }

    pub fn count_at(&self, severity: Severity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }
}

/// Runs all four checks and applies the blocking threshold.
pub fn review(
    draft: &PrescriptionDraft,
    patient_flags: &BTreeSet<String>,
    kb: &PharmacyKb,
    policy: ReviewPolicy,
) -> Result<PrescriptionReview, PrescriptionError> {
    draft.validate()?;
    let mut findings = check_interactions(draft, kb)?;
    findings.extend(verify_dosage(draft, kb)?);
    findings.extend(check_timing(draft, kb));
    findings.extend(check_contraindications(draft, patient_flags, kb)?);
    findings.sort();
    let verdict = if findings.iter().any(|f| f.severity >= policy.block_at) {
        Verdict::Blocked
    } else {
        Verdict::Approved
    };
    Ok(PrescriptionReview {
        draft_id: draft.id.clone(),
        round: draft.round,
        findings,
        verdict,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    #[serde(default)]
    pub flags: BTreeSet<String>,
    /// Drugs tried before without success; never proposed again.
    #[serde(default)]
    pub failed_medications: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub draft: PrescriptionDraft,
    /// One review per round, in order.
    pub reviews: Vec<PrescriptionReview>,
}

impl Proposal {
    pub fn final_review(&self) -> &PrescriptionReview {
        self.reviews.last().expect("at least one round")
    }
}

/// Slots implied by a schedule constraint.
pub fn default_slots(constraint: Option<&str>) -> Vec<String> {
    let slot = match constraint {
        Some("bedtime_only") => "bedtime",
        Some("with_food") => "noon",
        _ => "morning",
    };
    vec![slot.to_string()]
}

fn line_for(drug: &DrugEntry) -> PrescriptionLine {
    PrescriptionLine {
        drug_id: drug.id.clone(),
        dose: drug.dose_min,
        slots: default_slots(drug.schedule_constraint.as_deref()),
    }
}

/// Drafts a first-line regimen and, when it is blocked, runs a single
/// revision round that swaps each offending line for its first viable KB
/// alternative.
pub fn propose(
    id: impl Into<String>,
    case_ref: impl Into<String>,
    dx: &str,
    patient: &PatientProfile,
    disorders: &DisorderKb,
    pharmacy: &PharmacyKb,
    policy: ReviewPolicy,
) -> Result<Proposal, PrescriptionError> {
    let criteria = disorders
        .get(dx)
        .ok_or_else(|| PrescriptionError::UnknownDisorder(dx.to_string()))?;
    let candidates: Vec<&DrugEntry> = criteria
        .first_line_drugs
        .iter()
        .map(|d| pharmacy.drug(d).ok_or_else(|| PrescriptionError::UnknownDrug(d.clone())))
        .collect::<Result<_, _>>()?;
    let Some(first) = candidates
        .iter()
        .find(|d| !patient.failed_medications.contains(&d.id))
        .or(candidates.first())
    else {
        return Err(PrescriptionError::NoGuideline(dx.to_string()));
    };

    let mut draft = PrescriptionDraft::new(id, case_ref, dx, vec![line_for(first)]);
    let first_review = review(&draft, &patient.flags, pharmacy, policy)?;
    if !first_review.is_blocked() {
        return Ok(Proposal {
            draft,
            reviews: vec![first_review],
        });
    }

    let offending: BTreeSet<&str> = first_review
        .findings
        .iter()
        .filter(|f| f.severity >= policy.block_at)
        .flat_map(|f| f.subjects.iter().map(String::as_str))
        .collect();
    let mut in_use: BTreeSet<String> = draft.lines.iter().map(|l| l.drug_id.clone()).collect();
    let mut lines = Vec::with_capacity(draft.lines.len());
    for line in &draft.lines {
        if !offending.contains(line.drug_id.as_str()) {
            lines.push(line.clone());
            continue;
        }
        let drug = pharmacy.drug(&line.drug_id).expect("reviewed");
        let substitute = drug.alternatives.iter().filter_map(|a| pharmacy.drug(a)).find(|alt| {
            !in_use.contains(&alt.id)
                && !patient.failed_medications.contains(&alt.id)
                && alt.contraindication_flags.is_disjoint(&patient.flags)
        });
        match substitute {
            Some(alt) => {
                in_use.insert(alt.id.clone());
                lines.push(line_for(alt));
            }
            None => lines.push(line.clone()),
        }
    }
    draft.lines = lines;
    draft.round = 2;
    let second_review = review(&draft, &patient.flags, pharmacy, policy)?;
    Ok(Proposal {
        draft,
        reviews: vec![first_review, second_review],
    })
}

/// Asks the model for commentary on a draft and stores it as advisory text.
/// Gateway failures leave the draft without commentary.
pub async fn attach_advisory(
    draft: &mut PrescriptionDraft,
    patient_flags: &BTreeSet<String>,
    gateway: &LlmGateway,
    templates: &TemplateSet,
) {
    let Ok(template) = templates.get("prescription_advice") else {
        return;
    };
    let lines: Vec<String> = draft
        .lines
        .iter()
        .map(|l| format!("{} {}/day [{}]", l.drug_id, l.dose, l.slots.join(",")))
        .collect();
    let flags: Vec<&str> = patient_flags.iter().map(String::as_str).collect();
    let vars = params([
        ("dx", draft.dx.clone()),
        ("lines", lines.join("; ")),
        ("flags", if flags.is_empty() { "none".into() } else { flags.join(", ") }),
    ]);
    let Ok(prompt) = render_prompt(template, &vars) else {
        return;
    };
    match gateway.complete_prompt(prompt).await {
        Ok(resp) => draft.advisory = Some(resp.text),
        Err(err) => tracing::warn!(draft = %draft.id, %err, "prescription advisory unavailable"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KnowledgeBase;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::seed()
    }

    fn draft(lines: Vec<PrescriptionLine>) -> PrescriptionDraft {
        PrescriptionDraft::new("rx-1", "case-1", "MDD", lines)
    }

    fn flags(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn contraindicated_pair_gives_one_finding() {
        let kb = kb();
        let d = draft(vec![
            PrescriptionLine::new("sertraline", 50.0, &["morning"]),
            PrescriptionLine::new("phenelzine", 45.0, &["morning"]),
        ]);
        let found = check_interactions(&d, &kb.pharmacy).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].severity, Severity::Contraindicated);
        assert_eq!(found[0].subjects, vec!["phenelzine", "sertraline"]);
    }

    #[test]
    fn interactions_ignore_line_order() {
        let kb = kb();
        let mut lines = vec![
            PrescriptionLine::new("sertraline", 50.0, &["morning"]),
            PrescriptionLine::new("tramadol", 100.0, &["evening"]),
            PrescriptionLine::new("phenelzine", 45.0, &["morning"]),
        ];
        let a = check_interactions(&draft(lines.clone()), &kb.pharmacy).unwrap();
        lines.reverse();
        let b = check_interactions(&draft(lines), &kb.pharmacy).unwrap();
        assert_eq!(a, b);
        assert!(check_interactions(&draft(vec![PrescriptionLine::new("sertraline", 50.0, &["morning"])]), &kb.pharmacy)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn dosage_bounds_are_inclusive() {
        let kb = kb();
        let high = verify_dosage(&draft(vec![PrescriptionLine::new("sertraline", 500.0, &["morning"])]), &kb.pharmacy).unwrap();
        assert_eq!(high.len(), 1);
        assert_eq!(high[0].severity, Severity::Major);
        assert_eq!(high[0].kind, FindingKind::Dosage);
        for dose in [50.0, 200.0] {
            let ok = verify_dosage(&draft(vec![PrescriptionLine::new("sertraline", dose, &["morning"])]), &kb.pharmacy).unwrap();
            assert!(ok.is_empty());
        }
        assert_eq!(
            verify_dosage(&draft(vec![PrescriptionLine::new("unobtainium", 1.0, &["morning"])]), &kb.pharmacy),
            Err(PrescriptionError::UnknownDrug("unobtainium".into()))
        );
    }

    #[test]
    fn timing_conflict_needs_shared_slot() {
        let kb = kb();
        let same = draft(vec![
            PrescriptionLine::new("lithium", 600.0, &["morning"]),
            PrescriptionLine::new("levothyroxine", 0.05, &["morning"]),
        ]);
        let found = check_timing(&same, &kb.pharmacy);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].severity, Severity::Caution);
        let apart = draft(vec![
            PrescriptionLine::new("lithium", 600.0, &["noon"]),
            PrescriptionLine::new("levothyroxine", 0.05, &["morning"]),
        ]);
        assert!(check_timing(&apart, &kb.pharmacy).is_empty());
        let plain = draft(vec![
            PrescriptionLine::new("sertraline", 50.0, &["morning"]),
            PrescriptionLine::new("escitalopram", 10.0, &["morning"]),
        ]);
        assert!(check_timing(&plain, &kb.pharmacy).is_empty());
    }

    #[test]
    fn review_is_union_of_checks() {
        let kb = kb();
        let d = draft(vec![
            PrescriptionLine::new("sertraline", 300.0, &["morning"]),
            PrescriptionLine::new("phenelzine", 45.0, &["morning"]),
            PrescriptionLine::new("lithium", 600.0, &["morning"]),
            PrescriptionLine::new("levothyroxine", 0.05, &["morning"]),
        ]);
        let pf = flags(&["pimozide_use"]);
        let r = review(&d, &pf, &kb.pharmacy, ReviewPolicy::default()).unwrap();
        let mut union = check_interactions(&d, &kb.pharmacy).unwrap();
        union.extend(verify_dosage(&d, &kb.pharmacy).unwrap());
        union.extend(check_timing(&d, &kb.pharmacy));
        union.extend(check_contraindications(&d, &pf, &kb.pharmacy).unwrap());
        union.sort();
        assert_eq!(r.findings, union);
        assert!(r.is_blocked());
    }

    #[test]
    fn caution_only_is_approved() {
        let kb = kb();
        let d = draft(vec![
            PrescriptionLine::new("lithium", 600.0, &["morning"]),
            PrescriptionLine::new("levothyroxine", 0.05, &["morning"]),
        ]);
        let r = review(&d, &BTreeSet::new(), &kb.pharmacy, ReviewPolicy::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Approved);
        let strict = ReviewPolicy { block_at: Severity::Caution };
        assert!(review(&d, &BTreeSet::new(), &kb.pharmacy, strict).unwrap().is_blocked());
    }

    #[test]
    fn propose_mdd_starts_with_sertraline() {
        let kb = kb();
        let p = propose("rx-1", "case-1", "MDD", &PatientProfile::default(), &kb.disorders, &kb.pharmacy, ReviewPolicy::default())
            .unwrap();
        assert_eq!(p.draft.round, 1);
        let line = &p.draft.lines[0];
        let entry = kb.pharmacy.drug("sertraline").unwrap();
        assert_eq!(line.drug_id, "sertraline");
        assert!(line.dose >= entry.dose_min && line.dose <= entry.dose_max);
        assert!(!p.final_review().is_blocked());
    }

    #[test]
    fn contraindication_triggers_substitution_round() {
        let kb = kb();
        let patient = PatientProfile {
            flags: flags(&["pimozide_use"]),
            ..Default::default()
        };
        let p = propose("rx-1", "case-1", "MDD", &patient, &kb.disorders, &kb.pharmacy, ReviewPolicy::default()).unwrap();
        assert_eq!(p.draft.round, 2);
        assert_eq!(p.reviews.len(), 2);
        assert!(p.reviews[0].is_blocked());
        assert_eq!(p.draft.lines[0].drug_id, "escitalopram");
        assert!(!p.final_review().is_blocked());
    }

    #[test]
    fn failed_medication_is_skipped() {
        let kb = kb();
        let patient = PatientProfile {
            failed_medications: flags(&["sertraline"]),
            ..Default::default()
        };
        let p = propose("rx-1", "case-1", "MDD", &patient, &kb.disorders, &kb.pharmacy, ReviewPolicy::default()).unwrap();
        assert_eq!(p.draft.lines[0].drug_id, "escitalopram");
    }

    #[test]
    fn empty_guideline_errors() {
        let kb = kb();
        let err = propose("rx-1", "c", "ADJ", &PatientProfile::default(), &kb.disorders, &kb.pharmacy, ReviewPolicy::default());
        assert_eq!(err.unwrap_err(), PrescriptionError::NoGuideline("ADJ".into()));
        let err = propose("rx-1", "c", "XYZ", &PatientProfile::default(), &kb.disorders, &kb.pharmacy, ReviewPolicy::default());
        assert_eq!(err.unwrap_err(), PrescriptionError::UnknownDisorder("XYZ".into()));
    }

    #[test]
    fn invalid_draft_rejected() {
        let kb = kb();
        let empty = draft(vec![]);
        assert!(matches!(review(&empty, &BTreeSet::new(), &kb.pharmacy, ReviewPolicy::default()), Err(PrescriptionError::InvalidDraft(_))));
        let zero = draft(vec![PrescriptionLine::new("sertraline", 0.0, &["morning"])]);
        assert!(review(&zero, &BTreeSet::new(), &kb.pharmacy, ReviewPolicy::default()).is_err());
    }
}
