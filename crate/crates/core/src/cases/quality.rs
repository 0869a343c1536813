use serde::{Deserialize, Serialize};

use super::rules::{RuleCategory, RuleSet, ValidationReport};

/// Expert-style scores on a 0-5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub authenticity: f64,
    pub professionalism: f64,
    pub completeness: f64,
    pub overall: f64,
}

/// Category feeding each axis.
pub fn axis_category(axis: &str) -> Option<RuleCategory> {
    match axis {
        "authenticity" => Some(RuleCategory::Logic),
        "professionalism" => Some(RuleCategory::Terminology),
        "completeness" => Some(RuleCategory::Structure),
        _ => None,
    }
}

fn axis(report: &ValidationReport, rules: &RuleSet, category: RuleCategory) -> f64 {
    let total = rules.count_in(category);
    if total == 0 {
        return 5.0;
    }
    let failed = report.violations.iter().filter(|v| v.category == category).count();
    5.0 * (total - failed.min(total)) as f64 / total as f64
}

/// Each axis is 5 x (passing rules / rules) over its mapped category.
pub fn score_quality(report: &ValidationReport, rules: &RuleSet) -> QualityScore {
    let authenticity = axis(report, rules, RuleCategory::Logic);
    let professionalism = axis(report, rules, RuleCategory::Terminology);
    let completeness = axis(report, rules, RuleCategory::Structure);
    QualityScore {
        authenticity,
        professionalism,
        completeness,
        overall: (authenticity + professionalism + completeness) / 3.0,
    }
}
