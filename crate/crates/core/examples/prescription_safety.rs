//! Safety review of a clean regimen and of one with a dangerous pair, then
//! a guideline proposal for a patient with a contraindication.

use std::collections::BTreeSet;

use psysim::kb::KnowledgeBase;
use psysim::prescription::{propose, review, PatientProfile, PrescriptionDraft, PrescriptionLine, ReviewPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase::seed();
    let no_flags = BTreeSet::new();

    let clean = PrescriptionDraft::new("rx-1", "seed-mdd-001", "MDD", vec![PrescriptionLine::new("sertraline", 50.0, &["morning"])]);
    let verdict = review(&clean, &no_flags, &kb.pharmacy, ReviewPolicy::default())?;
    println!("clean regimen: {:?}, {} findings", verdict.verdict, verdict.findings.len());

    let pair = kb.pharmacy.interactions().max_by_key(|i| i.severity).expect("seed interactions");
    let dose = |id: &str| kb.pharmacy.drug(id).expect("known drug").dose_min;
    let risky = PrescriptionDraft::new(
        "rx-2",
        "seed-mdd-001",
        "MDD",
        vec![
            PrescriptionLine::new(&pair.drug_a, dose(&pair.drug_a), &["morning"]),
            PrescriptionLine::new(&pair.drug_b, dose(&pair.drug_b), &["evening"]),
        ],
    );
    let verdict = review(&risky, &no_flags, &kb.pharmacy, ReviewPolicy::default())?;
    println!("\n{} + {}: {:?}", pair.drug_a, pair.drug_b, verdict.verdict);
    for f in &verdict.findings {
        println!("  {:?} {} {:?}: {}", f.kind, f.severity, f.subjects, f.detail);
    }

    let patient = PatientProfile {
        flags: ["pregnancy".to_string()].into(),
        failed_medications: BTreeSet::new(),
    };
    let proposal = propose("rx-3", "seed-bp1-001", "BP1", &patient, &kb.disorders, &kb.pharmacy, ReviewPolicy::default())?;
    println!("\nproposal for BP1 in pregnancy, {} round(s):", proposal.reviews.len());
    for r in &proposal.reviews {
        println!("  round {}: {:?}", r.round, r.verdict);
    }
    for l in &proposal.draft.lines {
        println!("  {} {} per day at {:?}", l.drug_id, l.dose, l.slots);
    }
    Ok(())
}
