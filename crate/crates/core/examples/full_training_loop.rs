//! One complete training run on the scripted provider, printed as JSON.
//!
//! `cargo run --example full_training_loop -- MDD`

use psysim::platform::walkthrough::{self, MDD_CONSULTATION};
use psysim::platform::PlatformService;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disorder = std::env::args().nth(1).unwrap_or_else(|| "MDD".into());
    let service = PlatformService::scripted(42);
    let artifacts = walkthrough::run(&service, &disorder, &MDD_CONSULTATION).await?;

    for entry in &artifacts.replay.entries {
        println!("{:?}: {}", entry.speaker, entry.text);
        for flag in &entry.flags {
            println!("    [{:?}] {}", flag.category, flag.detail);
        }
    }
    let dims = &artifacts.evaluation.dims;
    println!("\nexams ordered: {:?}", artifacts.exam_order.items);
    println!("top hypothesis: {}", artifacts.diagnosis.ranking[0].disorder_code);
    println!("review verdict: {:?}", artifacts.review.review.verdict);
    println!(
        "scores: consultation {:.1}, clinical {:.1}, diagnosis {:.1}, medication {:.1}, composite {:.2}",
        dims.consultation_skills, dims.clinical_thinking, dims.diagnostic_accuracy, dims.medication_rationality,
        artifacts.evaluation.composite
    );
    for item in &artifacts.evaluation.feedback {
        println!("- {}", item.text);
    }
    println!("audit records: {}", service.audit_log().len());
    Ok(())
}
