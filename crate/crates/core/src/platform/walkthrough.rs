//! A scripted end-to-end training run: generate a case, consult for ten
//! turns, order exams, diagnose, prescribe, review and evaluate.

use serde::{Deserialize, Serialize};

use super::auth::{AuthToken, Role};
use super::rbac;
use super::service::{
    DiagnosisRecord, DiagnosisRequest, EvaluationRequest, LoginRequest, OpenSessionRequest, OrderRequest,
    PlatformService, PrescriptionRequest, ReviewRequest, ReviewResponse, ServiceError, TurnRequest,
};
use crate::cases::{CaseDocument, GenerationSpec, GenerationTask, TaskState};
use crate::dialogue::{Replay, SessionMode};
use crate::evaluation::EvaluationReport;
use crate::exams::ExamOrder;
use crate::prescription::PrescriptionDraft;

/// Ten doctor utterances covering a depression work-up.
pub const MDD_CONSULTATION: [&str; 10] = [
    "Hello, I'm Dr. Chen. What brings you in today?",
    "How has your mood been over the last few weeks?",
    "That sounds hard. Have you lost interest in things you used to enjoy?",
    "How have you been sleeping?",
    "How long has this been going on?",
    "How is your appetite and your energy?",
    "Has anyone in your family had depression or other mental health problems?",
    "I'm sorry you are carrying this. Have you had any thoughts of suicide or ending your life?",
    "Thank you for telling me. Do you drink alcohol or use any drugs?",
    "Thank you for sharing. We'll arrange some tests and a follow-up visit.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkthroughArtifacts {
    pub generation: GenerationTask,
    pub case: CaseDocument,
    pub replay: Replay,
    pub exam_order: ExamOrder,
    pub diagnosis: DiagnosisRecord,
    pub prescription: PrescriptionDraft,
    pub review: ReviewResponse,
    pub evaluation: EvaluationReport,
}

impl WalkthroughArtifacts {
    /// Canonical serialized form, for byte comparisons between runs.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialize")
    }
}

fn login(service: &PlatformService, login: &str, credential: &str) -> Result<AuthToken, ServiceError> {
    service.login(&LoginRequest {
        login: login.into(),
        credential: credential.into(),
        second_factor: None,
    })
}

/// Runs the loop on `service` as a fresh supervisor and trainee.
pub async fn run(service: &PlatformService, disorder_code: &str, questions: &[&str]) -> Result<WalkthroughArtifacts, ServiceError> {
    service.bootstrap_user("walk-supervisor", "supervisor-pass", Role::SupervisingPhysician)?;
    service.bootstrap_user("walk-trainee", "trainee-pass", Role::Trainee)?;
    let sup_token = login(service, "walk-supervisor", "supervisor-pass")?;
    let trainee_token = login(service, "walk-trainee", "trainee-pass")?;
    let sup = service.authorize(&sup_token.token, &rbac::CASES_GENERATE)?;

    let generation = service
        .generate_case(
            &sup,
            GenerationSpec {
                disorder_code: disorder_code.into(),
                difficulty: 2,
            },
        )
        .await?;
    if generation.state != TaskState::Done {
        return Err(ServiceError::new(
            502,
            "GenerationFailed",
            format!("case generation ended in {:?}: {:?}", generation.state, generation.failure),
        ));
    }
    let sup = service.authorize(&sup_token.token, &rbac::CASES_APPROVE)?;
    let case = service.approve_case(&sup, &generation.id)?;

    let trainee = service.authorize(&trainee_token.token, &rbac::SESSIONS_OPEN)?;
    let session = service.open_session(
        &trainee,
        &OpenSessionRequest {
            case_id: case.case.id.clone(),
            mode: Some(SessionMode::Standard),
        },
    )?;
    for q in questions {
        let trainee = service.authorize(&trainee_token.token, &rbac::SESSIONS_TURN)?;
        service.turn(&trainee, &session.id, &TurnRequest { text: q.to_string() }).await?;
    }

    let trainee = service.authorize(&trainee_token.token, &rbac::EXAMS_ORDER)?;
    let exam_order = service
        .order_exams(
            &trainee,
            &OrderRequest {
                session_id: session.id.clone(),
                items: case.case.reference_exams.clone(),
                patient_flags: Default::default(),
                acknowledge: Vec::new(),
                acknowledge_all: true,
            },
        )
        .await?;

    let trainee = service.authorize(&trainee_token.token, &rbac::DIAGNOSES)?;
    let diagnosis = service
        .diagnose(
            &trainee,
            &DiagnosisRequest {
                session_id: session.id.clone(),
                dx: disorder_code.into(),
                findings: None,
                advisory: true,
            },
        )
        .await?;

    let trainee = service.authorize(&trainee_token.token, &rbac::PRESCRIPTIONS)?;
    let prescription = service
        .create_prescription(
            &trainee,
            &PrescriptionRequest {
                session_id: session.id.clone(),
                dx: None,
                lines: None,
                patient_flags: Default::default(),
                failed_medications: Default::default(),
            },
        )
        .await?;
    let trainee = service.authorize(&trainee_token.token, &rbac::PRESCRIPTIONS_REVIEW)?;
    let review = service
        .review_prescription(
            &trainee,
            &prescription.id,
            &ReviewRequest {
                lines: None,
                advisory: true,
            },
        )
        .await?;

    let trainee = service.authorize(&trainee_token.token, &rbac::EVALUATIONS)?;
    let evaluation = service
        .evaluate(&trainee, &session.id, &EvaluationRequest { advisory: true })
        .await?;
    let trainee = service.authorize(&trainee_token.token, &rbac::SESSIONS_REPLAY)?;
    let replay = service.replay(&trainee, &session.id).await?;

    Ok(WalkthroughArtifacts {
        generation,
        case,
        replay,
        exam_order,
        diagnosis,
        prescription,
        review,
        evaluation,
    })
}
