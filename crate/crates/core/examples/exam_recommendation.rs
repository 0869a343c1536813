//! Ranking examinations for a set of findings, then drafting an order that
//! raises a contraindication alert.

use std::collections::BTreeSet;

use psysim::exams::{order, recommend, PriorityWeights};
use psysim::kb::KnowledgeBase;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase::seed();
    let tags: BTreeSet<String> = ["depressed_mood", "fatigue", "appetite_change"].map(String::from).into();
    let ranked = recommend(&tags, Some("MDD"), &kb.exams, &PriorityWeights::default())?;
    println!("{:<12} {:>9} {:>6} {:>6} {:>8}", "item", "necessity", "cost", "time", "priority");
    for r in ranked.iter().take(6) {
        println!(
            "{:<12} {:>9.3} {:>6.3} {:>6.3} {:>8.3}",
            r.code, r.necessity, r.cost_effectiveness, r.timeliness, r.priority
        );
    }

    let items: Vec<String> = ranked.iter().take(3).map(|r| r.code.clone()).collect();
    let flags: BTreeSet<String> = kb
        .exams
        .iter()
        .filter(|e| items.contains(&e.code))
        .flat_map(|e| e.contraindication_flags.iter().cloned())
        .take(1)
        .collect();
    let mut draft = order("order-1", "seed-mdd-001", &items, &flags, &kb.exams)?;
    println!("\norder total {:.2}, alerts {:?}", draft.total_cost, draft.alerts);
    if let Err(e) = draft.confirm() {
        println!("confirm refused: {e}");
    }
    draft.acknowledge_all();
    draft.confirm()?;
    println!("status after acknowledging: {:?}", draft.status);
    Ok(())
}
