//! Virtual case records, rule-based validation, quality scoring and the
//! generation pipeline.

mod content;
mod model;
mod pipeline;
mod quality;
mod rules;

pub use content::{fenced_block, parse_case_content, parse_style_content, CaseContent, ContentError, StyleContent};
pub use model::{seed_cases, CaseDocument, CaseRecord, Demographics, History, SymptomInstance, SCHEMA_VERSION};
pub use pipeline::{
    framework_symptoms, CasePipeline, GenerationSpec, GenerationTask, PipelineError, TaskCoordinator, TaskState,
    task_seed, Transition, CASE_TEMPLATE,
};
pub use quality::{axis_category, score_quality, QualityScore};
pub use rules::{
    validate_case, CategoryCount, CheckSpec, CompiledRule, Predicate, PredicateFactory, PredicateRegistry, RuleCategory,
    RuleContext, RuleError, RuleSeverity, RuleSet, RuleSpec, ValidationReport, Violation,
};
