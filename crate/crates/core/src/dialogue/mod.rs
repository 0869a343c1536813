//! Simulated patient consultation.
//!
//! Each doctor utterance goes through three stages: lexicon-based
//! understanding, context integration and reply generation through the
//! gateway. Doctor turns are annotated with skill feedback as they arrive.

mod engine;
mod lexicon;
mod session;

pub use engine::{ContextBudget, DialogueContext, DialogueEngine, DialogueError, Replay, ReplayEntry, PATIENT_TEMPLATE};
pub use lexicon::{Intent, IntentKind, Lexicon, LexiconMatch};
pub use session::{
    case_summary, DialogueSession, FeedbackFlag, FlagCategory, PatientState, SessionMode, SessionStatus, Speaker, Turn,
    STANDARD_THRESHOLD,
};
