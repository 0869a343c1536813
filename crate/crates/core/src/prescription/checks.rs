//! Static safety checks. Every check is a pure function of the draft and the
//! knowledge base, and its output is sorted so that line order never matters.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::kb::{PharmacyKb, Severity};
use super::{PrescriptionDraft, PrescriptionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Interaction,
    Dosage,
    Timing,
    Contraindication,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SafetyFinding {
    pub kind: FindingKind,
    pub severity: Severity,
    /// Drug ids, sorted.
    pub subjects: Vec<String>,
    pub detail: String,
}

fn known_ids<'a>(draft: &'a PrescriptionDraft, kb: &PharmacyKb) -> Result<BTreeSet<&'a str>, PrescriptionError> {
    let mut ids = BTreeSet::new();
    for line in &draft.lines {
        if kb.drug(&line.drug_id).is_none() {
            return Err(PrescriptionError::UnknownDrug(line.drug_id.clone()));
        }
        ids.insert(line.drug_id.as_str());
    }
    Ok(ids)
}

/// One finding per distinct unordered drug pair listed in the interaction KB.
pub fn check_interactions(draft: &PrescriptionDraft, kb: &PharmacyKb) -> Result<Vec<SafetyFinding>, PrescriptionError> {
    let ids: Vec<&str> = known_ids(draft, kb)?.into_iter().collect();
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            if let Some(entry) = kb.interaction(a, b) {
                out.push(SafetyFinding {
                    kind: FindingKind::Interaction,
                    severity: entry.severity,
                    subjects: vec![a.to_string(), b.to_string()],
                    detail: entry.mechanism.clone(),
                });
            }
        }
    }
    out.sort();
    Ok(out)
}

/// A major finding for every line whose daily dose lies outside the
/// inclusive KB range.
pub fn verify_dosage(draft: &PrescriptionDraft, kb: &PharmacyKb) -> Result<Vec<SafetyFinding>, PrescriptionError> {
    known_ids(draft, kb)?;
    let mut out = Vec::new();
    for line in &draft.lines {
        let drug = kb.drug(&line.drug_id).expect("checked above");
        if line.dose < drug.dose_min || line.dose > drug.dose_max {
            out.push(SafetyFinding {
                kind: FindingKind::Dosage,
                severity: Severity::Major,
                subjects: vec![line.drug_id.clone()],
                detail: format!(
                    "{} {}{}/day is outside {}-{}{}/day",
                    drug.name, line.dose, drug.unit, drug.dose_min, drug.dose_max, drug.unit
                ),
            });
        }
    }
    out.sort();
    Ok(out)
}

/// Findings for line pairs that share a slot while carrying schedule
/// constraints the conflict table declares incompatible. Unknown drugs are
/// skipped here; the other checks report them.
pub fn check_timing(draft: &PrescriptionDraft, kb: &PharmacyKb) -> Vec<SafetyFinding> {
    let mut out = BTreeSet::new();
    for (i, a) in draft.lines.iter().enumerate() {
        for b in &draft.lines[i + 1..] {
            let (Some(da), Some(db)) = (kb.drug(&a.drug_id), kb.drug(&b.drug_id)) else {
                continue;
            };
            let (Some(ca), Some(cb)) = (&da.schedule_constraint, &db.schedule_constraint) else {
                continue;
            };
            let Some(conflict) = kb.timing_conflict(ca, cb) else {
                continue;
            };
            let shared: BTreeSet<&String> = a.slots.iter().filter(|s| b.slots.contains(s)).collect();
            if shared.is_empty() {
                continue;
            }
            let mut subjects = vec![a.drug_id.clone(), b.drug_id.clone()];
            subjects.sort();
            let slots: Vec<&str> = shared.iter().map(|s| s.as_str()).collect();
            out.insert(SafetyFinding {
                kind: FindingKind::Timing,
                severity: conflict.severity,
                detail: format!(
                    "{} and {} share the {} slot ({} vs {}). {}",
                    subjects[0],
                    subjects[1],
                    slots.join("/"),
                    ca.min(cb),
                    ca.max(cb),
                    conflict.detail
                )
                .trim_end()
                .to_string(),
                subjects,
            });
        }
    }
    out.into_iter().collect()
}

/// One contraindicated finding per (drug, patient flag) overlap.
pub fn check_contraindications(
    draft: &PrescriptionDraft,
    patient_flags: &BTreeSet<String>,
    kb: &PharmacyKb,
) -> Result<Vec<SafetyFinding>, PrescriptionError> {
    let ids = known_ids(draft, kb)?;
    let mut out = Vec::new();
    for id in ids {
        let drug = kb.drug(id).expect("checked above");
        for flag in drug.contraindication_flags.intersection(patient_flags) {
            out.push(SafetyFinding {
                kind: FindingKind::Contraindication,
                severity: Severity::Contraindicated,
                subjects: vec![id.to_string()],
                detail: format!("{} is contraindicated with {flag}", drug.name),
            });
        }
    }
    out.sort();
    Ok(out)
}
