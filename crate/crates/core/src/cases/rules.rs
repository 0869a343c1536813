//! Declarative case validation.
//!
//! A rule file names a builtin predicate and its parameters. Builtins are
//! looked up in a [`PredicateRegistry`], which callers can extend with their
//! own predicates before compiling a [`RuleSet`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::model::CaseRecord;
use crate::kb::{self, KnowledgeBase};

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
    #[error("rule {id}: id prefix does not match category {category}")]
    BadPrefix { id: String, category: RuleCategory },
    #[error("rule {id}: unknown builtin {builtin}")]
    UnknownBuiltin { id: String, builtin: String },
    #[error("rule {id}: bad params: {detail}")]
    BadParams { id: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleCategory {
    Structure,
    Terminology,
    Logic,
}

impl RuleCategory {
    pub const ALL: [RuleCategory; 3] = [RuleCategory::Structure, RuleCategory::Terminology, RuleCategory::Logic];

    pub fn prefix(self) -> &'static str {
        match self {
            RuleCategory::Structure => "S-",
            RuleCategory::Terminology => "T-",
            RuleCategory::Logic => "L-",
        }
    }
}

impl fmt::Display for RuleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleCategory::Structure => "structure",
            RuleCategory::Terminology => "terminology",
            RuleCategory::Logic => "logic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleSeverity {
    Blocking,
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub builtin: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub category: RuleCategory,
    pub severity: RuleSeverity,
    pub description: String,
    pub check: CheckSpec,
}

/// What a predicate sees besides the case.
pub struct RuleContext<'a> {
    pub kb: &'a KnowledgeBase,
    /// The case serialized once, for path-based field access.
    pub json: &'a Value,
}

impl RuleContext<'_> {
    pub fn field(&self, path: &str) -> Option<&Value> {
        path.split('.').try_fold(self.json, |v, key| v.get(key))
    }
}

/// Returns `Some(detail)` when the case violates the rule.
pub type Predicate = Arc<dyn Fn(&CaseRecord, &RuleContext<'_>) -> Option<String> + Send + Sync>;
/// Builds a predicate from rule parameters.
pub type PredicateFactory = Arc<dyn Fn(&Value) -> Result<Predicate, String> + Send + Sync>;

#[derive(Clone)]
pub struct PredicateRegistry {
    factories: HashMap<String, PredicateFactory>,
}

impl fmt::Debug for PredicateRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<&String> = self.factories.keys().collect();
        names.sort();
        f.debug_struct("PredicateRegistry").field("builtins", &names).finish()
    }
}

impl Default for PredicateRegistry {
    fn default() -> Self {
        Self::builtins()
    }
}

fn str_param(params: &Value, key: &str) -> Result<String, String> {
    params
        .get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format!("missing string param {key}"))
}

fn int_param(params: &Value, key: &str) -> Result<i64, String> {
    params
        .get(key)
        .and_then(Value::as_i64)
        .ok_or_else(|| format!("missing integer param {key}"))
}

fn list_param(params: &Value, key: &str) -> Result<Vec<String>, String> {
    params
        .get(key)
        .and_then(Value::as_array)
        .map(|items| items.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .ok_or_else(|| format!("missing list param {key}"))
}

fn pred<F>(f: F) -> Predicate
where
    F: Fn(&CaseRecord, &RuleContext<'_>) -> Option<String> + Send + Sync + 'static,
{
    Arc::new(f)
}

fn fail_if(cond: bool, detail: impl FnOnce() -> String) -> Option<String> {
    cond.then(detail)
}

fn placeholder_regex() -> Regex {
    Regex::new(r"\{\s*[A-Za-z_][A-Za-z0-9_]*\s*\}").expect("static regex")
}

fn text_fields(case: &CaseRecord) -> [(&'static str, &str); 8] {
    [
        ("chief_complaint", &case.chief_complaint),
        ("history.present_illness", &case.history.present_illness),
        ("history.past", &case.history.past),
        ("history.family", &case.history.family),
        ("history.personal", &case.history.personal),
        ("mental_status", &case.mental_status),
        ("demographics.occupation", &case.demographics.occupation),
        ("demographics.sex", &case.demographics.sex),
    ]
}

impl PredicateRegistry {
    pub fn empty() -> Self {
        Self {
            factories: HashMap::new(),
        }
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&Value) -> Result<Predicate, String> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, params: &Value) -> Option<Result<Predicate, String>> {
        self.factories.get(name).map(|f| f(params))
    }

    pub fn builtins() -> Self {
        let mut r = Self::empty();

        r.register("non_empty_text", |p| {
            let field = str_param(p, "field")?;
            Ok(pred(move |_, ctx| {
                let ok = ctx.field(&field).and_then(Value::as_str).is_some_and(|s| !s.trim().is_empty());
                fail_if(!ok, || format!("{field} is empty"))
            }))
        });
        r.register("non_empty_list", |p| {
            let field = str_param(p, "field")?;
            Ok(pred(move |_, ctx| {
                let ok = ctx.field(&field).and_then(Value::as_array).is_some_and(|a| !a.is_empty());
                fail_if(!ok, || format!("{field} is empty"))
            }))
        });
        r.register("min_symptoms", |p| {
            let min = int_param(p, "min")? as usize;
            Ok(pred(move |case, _| {
                fail_if(case.symptoms.len() < min, || {
                    format!("{} symptoms, at least {min} required", case.symptoms.len())
                })
            }))
        });
        r.register("int_range", |p| {
            let field = str_param(p, "field")?;
            let (min, max) = (int_param(p, "min")?, int_param(p, "max")?);
            Ok(pred(move |_, ctx| match ctx.field(&field).and_then(Value::as_i64) {
                Some(v) if (min..=max).contains(&v) => None,
                Some(v) => Some(format!("{field} = {v} is outside {min}-{max}")),
                None => Some(format!("{field} is missing")),
            }))
        });
        r.register("text_in_set", |p| {
            let field = str_param(p, "field")?;
            let values: BTreeSet<String> = list_param(p, "values")?.into_iter().collect();
            Ok(pred(move |_, ctx| {
                let v = ctx.field(&field).and_then(Value::as_str).unwrap_or("");
                fail_if(!values.contains(v), || format!("{field} = {v:?} is not an allowed value"))
            }))
        });
        r.register("symptom_tags_known", |_| {
            Ok(pred(|case, ctx| {
                let unknown: Vec<&str> = case.symptom_tags().filter(|t| !ctx.kb.symptoms.contains(t)).collect();
                fail_if(!unknown.is_empty(), || format!("unknown symptom tags: {}", unknown.join(", ")))
            }))
        });
        r.register("dx_known", |p| {
            let field = str_param(p, "field")?;
            Ok(pred(move |_, ctx| {
                let v = ctx.field(&field).and_then(Value::as_str).unwrap_or("");
                fail_if(ctx.kb.disorders.get(v).is_none(), || format!("{field} {v:?} is not in the disorder KB"))
            }))
        });
        r.register("exam_codes_known", |_| {
            Ok(pred(|case, ctx| {
                let unknown: Vec<&str> = case
                    .reference_exams
                    .iter()
                    .filter(|c| ctx.kb.exams.get(c).is_none())
                    .map(String::as_str)
                    .collect();
                fail_if(!unknown.is_empty(), || format!("unknown exam codes: {}", unknown.join(", ")))
            }))
        });
        r.register("drug_ids_known", |_| {
            Ok(pred(|case, ctx| {
                let unknown: Vec<&str> = case
                    .reference_rx
                    .iter()
                    .filter(|d| ctx.kb.pharmacy.drug(d).is_none())
                    .map(String::as_str)
                    .collect();
                fail_if(!unknown.is_empty(), || format!("unknown drug ids: {}", unknown.join(", ")))
            }))
        });
        r.register("topics_known", |_| {
            Ok(pred(|case, ctx| {
                let unknown: Vec<&str> = case
                    .required_topics
                    .iter()
                    .filter(|t| !ctx.kb.symptoms.has_topic(t))
                    .map(String::as_str)
                    .collect();
                fail_if(!unknown.is_empty(), || format!("unknown topics: {}", unknown.join(", ")))
            }))
        });
        r.register("severity_range", |p| {
            let (min, max) = (int_param(p, "min")?, int_param(p, "max")?);
            Ok(pred(move |case, _| {
                let bad: Vec<String> = case
                    .symptoms
                    .iter()
                    .filter(|s| !(min..=max).contains(&i64::from(s.severity)))
                    .map(|s| format!("{}={}", s.tag, s.severity))
                    .collect();
                fail_if(!bad.is_empty(), || format!("severity outside {min}-{max}: {}", bad.join(", ")))
            }))
        });
        r.register("text_mentions_any", |p| {
            let field = str_param(p, "field")?;
            let terms: Vec<String> = list_param(p, "terms")?.iter().map(|t| t.to_lowercase()).collect();
            Ok(pred(move |_, ctx| {
                let text = ctx.field(&field).and_then(Value::as_str).unwrap_or("").to_lowercase();
                fail_if(!terms.iter().any(|t| text.contains(t.as_str())), || {
                    format!("{field} mentions none of: {}", terms.join(", "))
                })
            }))
        });
        r.register("text_excludes_disorder_names", |p| {
            let field = str_param(p, "field")?;
            Ok(pred(move |_, ctx| {
                let text = ctx.field(&field).and_then(Value::as_str).unwrap_or("").to_lowercase();
                let named = ctx.kb.disorders.iter().find_map(|d| {
                    std::iter::once(&d.name)
                        .chain(&d.aliases)
                        .find(|n| n.len() > 3 && text.contains(&n.to_lowercase()))
                        .cloned()
                });
                named.map(|n| format!("{field} names a diagnosis ({n})"))
            }))
        });
        r.register("no_unresolved_placeholders", |_| {
            let re = placeholder_regex();
            Ok(pred(move |case, _| {
                let hits: Vec<String> = text_fields(case)
                    .iter()
                    .filter_map(|(name, text)| {
                        if let Some(m) = re.find(text) {
                            Some(format!("{name}: {}", m.as_str()))
                        } else if text.contains(crate::gateway::UNSCRIPTED_MARKER) {
                            Some(format!("{name}: unscripted provider reply"))
                        } else {
                            None
                        }
                    })
                    .collect();
                fail_if(!hits.is_empty(), || format!("unresolved text: {}", hits.join("; ")))
            }))
        });
        r.register("dx_matches_disorder_code", |_| {
            Ok(pred(|case, _| {
                fail_if(case.ground_truth_dx != case.disorder_code, || {
                    format!("ground_truth_dx {} differs from disorder_code {}", case.ground_truth_dx, case.disorder_code)
                })
            }))
        });
        r.register("criteria_count_met", |_| {
            Ok(pred(|case, ctx| {
                let d = ctx.kb.disorders.get(&case.ground_truth_dx)?;
                let present: BTreeSet<&str> = case.symptom_tags().collect();
                let met = d.criterion_tags.iter().filter(|t| present.contains(t.as_str())).count();
                fail_if(met < d.min_required, || {
                    format!("{met} of {} criteria met for {}, {} required", d.criterion_tags.len(), d.disorder_code, d.min_required)
                })
            }))
        });
        r.register("duration_met", |_| {
            Ok(pred(|case, ctx| {
                let d = ctx.kb.disorders.get(&case.ground_truth_dx)?;
                let longest = case
                    .symptoms
                    .iter()
                    .filter(|s| d.criterion_tags.contains(&s.tag))
                    .map(|s| s.onset_weeks)
                    .max()
                    .unwrap_or(0);
                fail_if(longest < d.min_duration, || {
                    format!("episode of {longest} weeks, {} requires {}", d.disorder_code, d.min_duration)
                })
            }))
        });
        r.register("no_exclusion_tags", |_| {
            Ok(pred(|case, ctx| {
                let d = ctx.kb.disorders.get(&case.ground_truth_dx)?;
                let hit: Vec<&str> = case.symptom_tags().filter(|t| d.exclusion_tags.contains(*t)).collect();
                fail_if(!hit.is_empty(), || format!("exclusion symptoms for {}: {}", d.disorder_code, hit.join(", ")))
            }))
        });
        r.register("rx_in_guideline", |_| {
            Ok(pred(|case, ctx| {
                let d = ctx.kb.disorders.get(&case.ground_truth_dx)?;
                let off: Vec<&str> = case
                    .reference_rx
                    .iter()
                    .filter(|rx| !d.first_line_drugs.contains(rx) && !d.tcm_options.contains(rx))
                    .map(String::as_str)
                    .collect();
                fail_if(!off.is_empty(), || format!("off-guideline drugs: {}", off.join(", ")))
            }))
        });
        r.register("exams_relevant", |_| {
            Ok(pred(|case, ctx| {
                let present: BTreeSet<&str> = case.symptom_tags().collect();
                let irrelevant: Vec<&str> = case
                    .reference_exams
                    .iter()
                    .filter(|code| {
                        ctx.kb.exams.get(code).is_some_and(|item| {
                            !item.relevant_disorders.contains(&case.ground_truth_dx)
                                && !item.relevant_symptom_tags.iter().any(|t| present.contains(t.as_str()))
                        })
                    })
                    .map(String::as_str)
                    .collect();
                fail_if(!irrelevant.is_empty(), || format!("exams unrelated to the case: {}", irrelevant.join(", ")))
            }))
        });
        r.register("atypical_within_difficulty", |_| {
            Ok(pred(|case, _| {
                let n = case.symptoms.iter().filter(|s| s.atypical).count() as i64;
                fail_if(n > case.difficulty, || format!("{n} atypical symptoms at difficulty {}", case.difficulty))
            }))
        });
        r.register("topic_required_for_symptom", |p| {
            let symptom = str_param(p, "symptom")?;
            let topic = str_param(p, "topic")?;
            Ok(pred(move |case, _| {
                fail_if(case.has_symptom(&symptom) && !case.required_topics.contains(&topic), || {
                    format!("{symptom} present but topic {topic} not required")
                })
            }))
        });
        r.register("onset_within_lifetime", |_| {
            Ok(pred(|case, _| {
                let lifetime = case.demographics.age.max(0) * 52;
                let bad: Vec<&str> = case
                    .symptoms
                    .iter()
                    .filter(|s| i64::from(s.onset_weeks) > lifetime)
                    .map(|s| s.tag.as_str())
                    .collect();
                fail_if(!bad.is_empty(), || format!("onset precedes birth: {}", bad.join(", ")))
            }))
        });
        r.register("requires_category", |p| {
            let disorder = str_param(p, "disorder")?;
            let category = str_param(p, "category")?;
            let min = int_param(p, "min")? as usize;
            Ok(pred(move |case, ctx| {
                if case.ground_truth_dx != disorder {
                    return None;
                }
                let n = case
                    .symptom_tags()
                    .filter(|t| ctx.kb.symptoms.category_of(t) == Some(category.as_str()))
                    .count();
                fail_if(n < min, || format!("{disorder} case has {n} {category} symptoms, needs {min}"))
            }))
        });
        r.register("unique_symptom_tags", |_| {
            Ok(pred(|case, _| {
                let mut seen = BTreeSet::new();
                let dups: BTreeSet<&str> = case.symptom_tags().filter(|t| !seen.insert(*t)).collect();
                fail_if(!dups.is_empty(), || {
                    format!("repeated tags: {}", dups.into_iter().collect::<Vec<_>>().join(", "))
                })
            }))
        });
        r
    }
}

pub struct CompiledRule {
    pub spec: RuleSpec,
    predicate: Predicate,
}

impl fmt::Debug for CompiledRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledRule").field("spec", &self.spec).finish_non_exhaustive()
    }
}

#[derive(Debug, Default)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    pub fn from_specs(specs: Vec<RuleSpec>, registry: &PredicateRegistry) -> Result<Self, RuleError> {
        let mut seen = BTreeSet::new();
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.id.clone()) {
                return Err(RuleError::DuplicateId(spec.id));
            }
            if !spec.id.starts_with(spec.category.prefix()) {
                return Err(RuleError::BadPrefix {
                    id: spec.id,
                    category: spec.category,
                });
            }
            let predicate = match registry.build(&spec.check.builtin, &spec.check.params) {
                None => {
                    return Err(RuleError::UnknownBuiltin {
                        id: spec.id,
                        builtin: spec.check.builtin,
                    })
                }
                Some(Err(detail)) => return Err(RuleError::BadParams { id: spec.id, detail }),
                Some(Ok(p)) => p,
            };
            rules.push(CompiledRule { spec, predicate });
        }
        Ok(Self { rules })
    }

    pub fn from_json(text: &str, registry: &PredicateRegistry) -> Result<Self, RuleError> {
        Self::from_specs(serde_json::from_str(text)?, registry)
    }

    /// The shipped rule file with the builtin predicates.
    pub fn seed() -> Self {
        Self::from_json(kb::seed::VALIDATION_RULES, &PredicateRegistry::builtins()).expect("seed rules compile")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RuleSpec> {
        self.rules.iter().map(|r| &r.spec)
    }

    pub fn count_in(&self, category: RuleCategory) -> usize {
        self.rules.iter().filter(|r| r.spec.category == category).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub category: RuleCategory,
    pub severity: RuleSeverity,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub evaluated: usize,
    pub violated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// Sorted by rule id.
    pub violations: Vec<Violation>,
    pub counts: BTreeMap<RuleCategory, CategoryCount>,
}

impl ValidationReport {
    pub fn blocking(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == RuleSeverity::Blocking)
    }

    pub fn violated(&self, rule_id: &str) -> bool {
        self.violations.iter().any(|v| v.rule_id == rule_id)
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.rule_id.as_str()).collect()
    }
}

/// Evaluates every rule once. Malformed fields surface as violations.
pub fn validate_case(case: &CaseRecord, rules: &RuleSet, kb: &KnowledgeBase) -> ValidationReport {
    let json = serde_json::to_value(case).expect("case records always serialize");
    let ctx = RuleContext { kb, json: &json };
    let mut counts: BTreeMap<RuleCategory, CategoryCount> =
        RuleCategory::ALL.iter().map(|c| (*c, CategoryCount::default())).collect();
    let mut violations = Vec::new();
    for rule in &rules.rules {
        let count = counts.entry(rule.spec.category).or_default();
        count.evaluated += 1;
        if let Some(detail) = (rule.predicate)(case, &ctx) {
            count.violated += 1;
            violations.push(Violation {
                rule_id: rule.spec.id.clone(),
                category: rule.spec.category,
                severity: rule.spec.severity,
                detail,
            });
        }
    }
    violations.sort_by(|a, b| a.rule_id.cmp(&b.rule_id));
    let passed = !violations.iter().any(|v| v.severity == RuleSeverity::Blocking);
    ValidationReport {
        passed,
        violations,
        counts,
    }
}
