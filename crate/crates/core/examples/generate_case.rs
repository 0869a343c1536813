//! Driving one case through the generation pipeline and printing each state
//! transition, the validation report and the quality scores.
//!
//! `cargo run --example generate_case -- GAD 3`

use std::sync::Arc;

use psysim::cases::{CasePipeline, GenerationSpec, RuleSet};
use psysim::clock::StepClock;
use psysim::gateway::{LlmGateway, ProviderConfig, ScriptedProvider, TemplateSet};
use psysim::kb::KnowledgeBase;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let code = args.next().unwrap_or_else(|| "MDD".into());
    let difficulty = args.next().map(|d| d.parse()).transpose()?.unwrap_or(2);

    let gateway = LlmGateway::new(Arc::new(ScriptedProvider::demo()), ProviderConfig::default())?;
    let pipeline = CasePipeline::new(
        Arc::new(KnowledgeBase::seed()),
        Arc::new(RuleSet::seed()),
        Arc::new(TemplateSet::seed()),
        Arc::new(gateway),
        Arc::new(StepClock::new(0, 1)),
        42,
    );
    let mut task = pipeline.start_generation(
        "case-demo",
        GenerationSpec {
            disorder_code: code,
            difficulty,
        },
    )?;
    while !task.state.is_terminal() {
        let from = task.state;
        let to = pipeline.advance(&mut task).await?;
        println!("{from:?} -> {to:?}");
    }

    if let Some(report) = &task.report {
        println!("validation passed: {}", report.passed);
        for v in &report.violations {
            println!("  {} ({:?}): {}", v.rule_id, v.severity, v.detail);
        }
    }
    if let Some(q) = &task.quality {
        println!(
            "quality: authenticity {:.2}, professionalism {:.2}, completeness {:.2}",
            q.authenticity, q.professionalism, q.completeness
        );
    }
    let case = &task.draft;
    println!("\n{} year old {} {}", case.demographics.age, case.demographics.sex, case.demographics.occupation);
    println!("chief complaint: {}", case.chief_complaint);
    for s in &case.symptoms {
        println!("  {} severity {} onset {}w{}", s.tag, s.severity, s.onset_weeks, if s.atypical { " (atypical)" } else { "" });
    }
    Ok(())
}
