//! Scores a short, incomplete consultation and prints the templated feedback,
//! then folds two sessions into a progress profile.

use std::sync::Arc;

use psysim::cases::seed_cases;
use psysim::diagnosis::match_criteria;
use psysim::dialogue::{ContextBudget, DialogueEngine, Lexicon, SessionMode};
use psysim::evaluation::{evaluate_session, track_progress, FeedbackTemplates, ProgressPoint, SessionArtifacts, Weights};
use psysim::gateway::{LlmGateway, ProviderConfig, ScriptedProvider, TemplateSet};
use psysim::kb::KnowledgeBase;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = Arc::new(KnowledgeBase::seed());
    let gateway = LlmGateway::new(Arc::new(ScriptedProvider::demo()), ProviderConfig::default())?;
    let engine = DialogueEngine::new(
        kb.clone(),
        Arc::new(Lexicon::seed()),
        Arc::new(TemplateSet::seed()),
        Arc::new(gateway),
        ContextBudget::default(),
    );
    let templates = FeedbackTemplates::seed();
    let doc = seed_cases().into_iter().find(|d| d.case.id == "seed-mdd-001").expect("seed case");
    let case = &doc.case;
    let ranking: Vec<String> = match_criteria(&case.symptoms, &kb.disorders)
        .into_iter()
        .map(|h| h.disorder_code)
        .collect();

    let mut history = Vec::new();
    let scripts: [&[&str]; 2] = [
        &["What brings you in?", "How is your sleep?"],
        &[
            "What brings you in?",
            "How has your mood been?",
            "Have you lost interest in things you enjoy?",
            "How is your sleep?",
            "How long has this been going on?",
            "Any thoughts of suicide?",
            "Does anyone in your family have depression?",
        ],
    ];
    for (n, questions) in scripts.iter().enumerate() {
        let mut session = engine.open_session(format!("sess-{n}"), case, true, SessionMode::Standard, 1, None)?;
        for q in *questions {
            engine.exchange(&mut session, q).await?;
        }
        engine.close(&mut session);
        let ordered = case.reference_exams[..n + 1].to_vec();
        let artifacts = SessionArtifacts {
            session: &session,
            user_id: "trainee-1",
            ordered_exams: &ordered,
            dx_entered: Some(if n == 0 { "GAD" } else { "MDD" }),
            ranking: &ranking,
            rx_review: None,
            ground_truth: &case.ground_truth_dx,
            reference_exams: &case.reference_exams,
        };
        let report = evaluate_session(&artifacts, Weights::default(), &templates, 1_000 * (n as u64 + 1))?;
        println!("session {}: composite {:.2}", report.session_id, report.composite);
        println!("  {:?}", report.dims);
        for item in &report.feedback {
            println!("  - [{:?}] {}", item.kind, item.text);
        }
        history.push(ProgressPoint::from(&report));
    }

    let latest = history.pop().expect("two sessions");
    let profile = track_progress("trainee-1", &history, latest);
    for (name, trend) in &profile.trends {
        println!("{name}: {:.1} -> {:.1} ({:?}%)", trend.first, trend.last, trend.delta_percent.map(|d| d.round()));
    }
    println!("weakest now: {:?}", profile.weakest());
    Ok(())
}
