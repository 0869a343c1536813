//! Examination recommendation, ordering and result parsing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KbError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExamError {
    #[error("at least one symptom is needed to recommend examinations")]
    InsufficientFindings,
    #[error("unknown examination item {0}")]
    UnknownItem(String),
    #[error("order {0} has unacknowledged alerts")]
    UnacknowledgedAlerts(String),
    #[error("malformed result value for {analyte}: {detail}")]
    ParseError { analyte: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamItem {
    pub code: String,
    pub name: String,
    pub cost: f64,
    /// Hours.
    pub turnaround: f64,
    #[serde(default)]
    pub relevant_symptom_tags: BTreeSet<String>,
    #[serde(default)]
    pub relevant_disorders: BTreeSet<String>,
    #[serde(default)]
    pub contraindication_flags: BTreeSet<String>,
    #[serde(default)]
    pub preparation: String,
    #[serde(default)]
    pub precautions: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExamKb {
    items: BTreeMap<String, ExamItem>,
    max_cost: f64,
    max_turnaround: f64,
}

impl ExamKb {
    pub fn new(items: Vec<ExamItem>) -> Result<Self, KbError> {
        const FILE: &str = "exams.json";
        let mut map = BTreeMap::new();
        for item in items {
            if !(item.cost >= 0.0 && item.cost.is_finite()) {
                return Err(KbError::invalid(FILE, format!("{}: cost must be non-negative", item.code)));
            }
            if !(item.turnaround > 0.0 && item.turnaround.is_finite()) {
                return Err(KbError::invalid(FILE, format!("{}: turnaround must be positive", item.code)));
            }
            if map.contains_key(&item.code) {
                return Err(KbError::invalid(FILE, format!("duplicate exam code {}", item.code)));
            }
            map.insert(item.code.clone(), item);
        }
        let max_cost = map.values().map(|i| i.cost).fold(0.0, f64::max);
        let max_turnaround = map.values().map(|i| i.turnaround).fold(0.0, f64::max);
        Ok(Self {
            items: map,
            max_cost,
            max_turnaround,
        })
    }

    pub fn get(&self, code: &str) -> Option<&ExamItem> {
        self.items.get(code)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExamItem> {
        self.items.values()
    }

    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn max_turnaround(&self) -> f64 {
        self.max_turnaround
    }
}

/// Relative weights of the three priority factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    pub necessity: f64,
    pub cost_effectiveness: f64,
    pub timeliness: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self {
            necessity: 0.5,
            cost_effectiveness: 0.3,
            timeliness: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecommendation {
    pub code: String,
    pub necessity: f64,
    pub cost_effectiveness: f64,
    pub timeliness: f64,
    pub priority: f64,
}

/// Necessity: share of the item's relevance set (symptoms plus disorders)
/// hit by the inputs. Zero when the item declares no relevance at all.
pub fn necessity(item: &ExamItem, symptom_tags: &BTreeSet<String>, provisional_dx: Option<&str>) -> f64 {
    let relevance: BTreeSet<&str> = item
        .relevant_symptom_tags
        .iter()
        .chain(&item.relevant_disorders)
        .map(String::as_str)
        .collect();
    if relevance.is_empty() {
        return 0.0;
    }
    let hits = relevance
        .iter()
        .filter(|r| symptom_tags.contains(**r) || provisional_dx == Some(**r))
        .count();
    hits as f64 / relevance.len() as f64
}

pub fn score_item(
    item: &ExamItem,
    symptom_tags: &BTreeSet<String>,
    provisional_dx: Option<&str>,
    kb: &ExamKb,
    weights: &PriorityWeights,
) -> ExamRecommendation {
    let necessity = necessity(item, symptom_tags, provisional_dx);
    let cost_effectiveness = if kb.max_cost > 0.0 { 1.0 - item.cost / kb.max_cost } else { 1.0 };
    let timeliness = 1.0 - item.turnaround / kb.max_turnaround;
    let priority =
        weights.necessity * necessity + weights.cost_effectiveness * cost_effectiveness + weights.timeliness * timeliness;
    ExamRecommendation {
        code: item.code.clone(),
        necessity,
        cost_effectiveness,
        timeliness,
        priority,
    }
}

/// Scores every KB item and sorts by priority (descending), breaking ties by
/// ascending code.
pub fn recommend(
    symptom_tags: &BTreeSet<String>,
    provisional_dx: Option<&str>,
    kb: &ExamKb,
    weights: &PriorityWeights,
) -> Result<Vec<ExamRecommendation>, ExamError> {
    if symptom_tags.is_empty() {
        return Err(ExamError::InsufficientFindings);
    }
    let mut recs: Vec<_> = kb
        .iter()
        .map(|item| score_item(item, symptom_tags, provisional_dx, kb, weights))
        .collect();
    recs.sort_by(|a, b| b.priority.total_cmp(&a.priority).then_with(|| a.code.cmp(&b.code)));
    Ok(recs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamAlert {
    pub item: String,
    pub flag: String,
    pub acknowledged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStatus {
    Draft,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamOrder {
    pub id: String,
    pub case_ref: String,
    pub items: Vec<String>,
    pub total_cost: f64,
    pub alerts: Vec<ExamAlert>,
    pub status: OrderStatus,
    /// Preparation and precaution notes per item, in order.
    pub instructions: Vec<ExamInstruction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamInstruction {
    pub item: String,
    pub preparation: String,
    pub precautions: String,
}

/// Drafts an order. One alert is raised per (item, patient flag) pair where
/// the item lists that flag as a contraindication.
pub fn order(
    id: impl Into<String>,
    case_ref: impl Into<String>,
    items: &[String],
    patient_flags: &BTreeSet<String>,
    kb: &ExamKb,
) -> Result<ExamOrder, ExamError> {
    let mut total_cost = 0.0;
    let mut alerts = Vec::new();
    let mut instructions = Vec::new();
    for code in items {
        let item = kb.get(code).ok_or_else(|| ExamError::UnknownItem(code.clone()))?;
        total_cost += item.cost;
        for flag in item.contraindication_flags.intersection(patient_flags) {
            alerts.push(ExamAlert {
                item: code.clone(),
                flag: flag.clone(),
                acknowledged: false,
            });
        }
        instructions.push(ExamInstruction {
            item: code.clone(),
            preparation: item.preparation.clone(),
            precautions: item.precautions.clone(),
        });
    }
    Ok(ExamOrder {
        id: id.into(),
        case_ref: case_ref.into(),
        items: items.to_vec(),
        total_cost,
        alerts,
        status: OrderStatus::Draft,
        instructions,
    })
}

impl ExamOrder {
    /// Marks matching alerts as acknowledged. Returns how many changed.
    pub fn acknowledge(&mut self, item: &str, flag: &str) -> usize {
        let mut n = 0;
        for a in self.alerts.iter_mut().filter(|a| a.item == item && a.flag == flag && !a.acknowledged) {
            a.acknowledged = true;
            n += 1;
        }
        n
    }

    pub fn acknowledge_all(&mut self) {
        for a in &mut self.alerts {
            a.acknowledged = true;
        }
    }

    /// Alerts never veto an order; they only have to be acknowledged.
    pub fn confirm(&mut self) -> Result<(), ExamError> {
        if self.alerts.iter().any(|a| !a.acknowledged) {
            return Err(ExamError::UnacknowledgedAlerts(self.id.clone()));
        }
        self.status = OrderStatus::Confirmed;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultValue {
    pub analyte: String,
    /// Kept as received; reports arrive as text.
    pub value: serde_json::Value,
    pub unit: String,
    pub ref_low: f64,
    pub ref_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamResultReport {
    pub order_ref: String,
    pub values: Vec<ResultValue>,
    #[serde(default)]
    pub narrative: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    High,
    Low,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamFinding {
    pub analyte: String,
    pub value: f64,
    pub abnormal: bool,
    pub direction: Direction,
}

fn numeric(v: &ResultValue) -> Result<f64, ExamError> {
    let err = |detail: String| ExamError::ParseError {
        analyte: v.analyte.clone(),
        detail,
    };
    let x = match &v.value {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| err("not representable".into()))?,
        serde_json::Value::String(s) => s.trim().parse::<f64>().map_err(|_| err(format!("{s:?} is not a number")))?,
        other => return Err(err(format!("unexpected value {other}"))),
    };
    if !x.is_finite() {
        return Err(err("value is not finite".into()));
    }
    if v.ref_low > v.ref_high {
        return Err(err(format!("reference range [{}, {}] is inverted", v.ref_low, v.ref_high)));
    }
    Ok(x)
}

/// Flags values outside their inclusive reference range.
pub fn parse_result(report: &ExamResultReport) -> Result<Vec<ExamFinding>, ExamError> {
    report
        .values
        .iter()
        .map(|v| {
            let value = numeric(v)?;
            let direction = if value > v.ref_high {
                Direction::High
            } else if value < v.ref_low {
                Direction::Low
            } else {
                Direction::Normal
            };
            Ok(ExamFinding {
                analyte: v.analyte.clone(),
                value,
                abnormal: direction != Direction::Normal,
                direction,
            })
        })
        .collect()
}

/// Maps abnormal analytes to symptom tags so that exam findings can feed back
/// into criteria matching. Keys are `"<analyte>:<high|low>"`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FindingTagMap(pub BTreeMap<String, String>);

impl FindingTagMap {
    pub fn tags_for(&self, findings: &[ExamFinding]) -> BTreeSet<String> {
        findings
            .iter()
            .filter(|f| f.abnormal)
            .filter_map(|f| {
                let dir = if f.direction == Direction::High { "high" } else { "low" };
                self.0.get(&format!("{}:{dir}", f.analyte)).cloned()
            })
            .collect()
    }
}
