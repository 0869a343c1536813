//! A short consultation with the simulated patient, showing the intent read
//! from each question and the feedback flags raised along the way.

use std::sync::Arc;

use psysim::cases::seed_cases;
use psysim::dialogue::{ContextBudget, DialogueEngine, Lexicon, SessionMode};
use psysim::gateway::{LlmGateway, ProviderConfig, ScriptedProvider, TemplateSet};
use psysim::kb::KnowledgeBase;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = LlmGateway::new(Arc::new(ScriptedProvider::demo()), ProviderConfig::default())?;
    let engine = DialogueEngine::new(
        Arc::new(KnowledgeBase::seed()),
        Arc::new(Lexicon::seed()),
        Arc::new(TemplateSet::seed()),
        Arc::new(gateway),
        ContextBudget::default(),
    );
    let doc = seed_cases().into_iter().find(|d| d.case.id == "seed-mdd-001").expect("seed case");
    let mut session = engine.open_session("sess-demo", &doc.case, doc.expert_approved, SessionMode::Challenge, 7, None)?;
    println!("case: {}", session.summary);
    println!("atypical symptom this run: {:?}\n", session.patient_state.atypical_symptom);

    for question in [
        "Good morning, please have a seat. What brings you in?",
        "How has your mood been?",
        "Any thoughts of suicide?",
        "That's all for today, goodbye.",
    ] {
        let (doctor, patient) = engine.exchange(&mut session, question).await?;
        let intent = doctor.intent.as_ref().expect("doctor turns carry an intent");
        println!("Doctor [{:?} {:?}]: {}", intent.kind, intent.entities, doctor.text);
        for flag in &doctor.feedback_flags {
            println!("    {:?}/{}: {}", flag.category, flag.code, flag.detail);
        }
        println!("Patient: {}", patient.text);
    }

    engine.close(&mut session);
    let replay = engine.replay(&session);
    println!("\nmissed topics: {:?}", replay.missed_topics);
    Ok(())
}
