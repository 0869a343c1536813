//! Criteria matching for a seed case, the differential between the top
//! hypotheses, guideline treatment, and a model suggestion merged under the
//! rule ranking.

use psysim::cases::seed_cases;
use psysim::diagnosis::{differential, match_criteria, merge_llm_suggestion, recommend_treatment};
use psysim::kb::KnowledgeBase;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase::seed();
    let case = seed_cases().into_iter().find(|d| d.case.id == "seed-gad-001").expect("seed case").case;

    let ranking = match_criteria(&case.symptoms, &kb.disorders);
    for h in ranking.iter().take(4) {
        println!(
            "{:<4} eligible={:<5} coverage={:.2} duration_met={} missing={:?}",
            h.disorder_code, h.eligible, h.coverage, h.duration_met, h.missing_tags
        );
    }

    let report = differential(&ranking[..2], &kb.disorders);
    for pair in &report.pairs {
        println!("\n{} vs {}", pair.first, pair.second);
        for f in &pair.distinguishing {
            println!("  {:<22} supports {:<4} present={}", f.tag, f.supports, f.present);
        }
    }

    let rx = recommend_treatment(&ranking[0].disorder_code, &kb.disorders, &kb.pharmacy, true)?;
    println!("\ntreatment for {}:", rx.disorder_code);
    for d in &rx.drugs {
        println!("  {} ({})", d.drug_id, d.rationale);
    }

    let merged = merge_llm_suggestion(&ranking, "Likely panic disorder, though schizophrenia is possible.", &kb.disorders);
    println!("\nmodel mentions: {:?}", merged.mentions);
    println!("notice: {:?}", merged.notice);
    assert_eq!(merged.ranking, ranking);
    Ok(())
}
