use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::KbError;

/// Four-level severity scale shared by every safety finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Caution,
    Major,
    Contraindicated,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Caution => "caution",
            Severity::Major => "major",
            Severity::Contraindicated => "contraindicated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugEntry {
    pub id: String,
    pub name: String,
    pub drug_class: String,
    /// Daily dose bounds, inclusive, in `unit`.
    pub dose_min: f64,
    pub dose_max: f64,
    #[serde(default = "default_unit")]
    pub unit: String,
    #[serde(default)]
    pub schedule_constraint: Option<String>,
    #[serde(default)]
    pub contraindication_flags: BTreeSet<String>,
    /// Substitutes tried, in order, when this drug is blocked.
    #[serde(default)]
    pub alternatives: Vec<String>,
    #[serde(default)]
    pub adverse_warnings: Vec<String>,
}

fn default_unit() -> String {
    "mg".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEntry {
    pub drug_a: String,
    pub drug_b: String,
    pub severity: Severity,
    pub mechanism: String,
}

/// Two schedule constraints that cannot share a dosing slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingConflict {
    pub constraint_a: String,
    pub constraint_b: String,
    #[serde(default = "default_timing_severity")]
    pub severity: Severity,
    #[serde(default)]
    pub detail: String,
}

fn default_timing_severity() -> Severity {
    Severity::Caution
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PharmacyKb {
    drugs: BTreeMap<String, DrugEntry>,
    interactions: BTreeMap<(String, String), InteractionEntry>,
    timing: BTreeMap<(String, String), TimingConflict>,
}

impl PharmacyKb {
    pub fn new(
        drugs: Vec<DrugEntry>,
        interactions: Vec<InteractionEntry>,
        timing: Vec<TimingConflict>,
    ) -> Result<Self, KbError> {
        let mut drug_map = BTreeMap::new();
        for d in drugs {
            if !(d.dose_min > 0.0 && d.dose_min <= d.dose_max && d.dose_max.is_finite()) {
                return Err(KbError::invalid(
                    "drugs.json",
                    format!("{}: need 0 < dose_min <= dose_max", d.id),
                ));
            }
            if drug_map.contains_key(&d.id) {
                return Err(KbError::invalid("drugs.json", format!("duplicate drug {}", d.id)));
            }
            drug_map.insert(d.id.clone(), d);
        }
        for d in drug_map.values() {
            if let Some(alt) = d.alternatives.iter().find(|a| !drug_map.contains_key(*a) || *a == &d.id) {
                return Err(KbError::invalid("drugs.json", format!("{}: bad alternative {alt}", d.id)));
            }
        }
        let mut inter = BTreeMap::new();
        for e in interactions {
            if e.drug_a == e.drug_b {
                return Err(KbError::invalid("interactions.json", format!("{} interacts with itself", e.drug_a)));
            }
            for id in [&e.drug_a, &e.drug_b] {
                if !drug_map.contains_key(id) {
                    return Err(KbError::invalid("interactions.json", format!("unknown drug {id}")));
                }
            }
            let key = pair_key(&e.drug_a, &e.drug_b);
            if inter.contains_key(&key) {
                return Err(KbError::invalid(
                    "interactions.json",
                    format!("duplicate pair {} / {}", key.0, key.1),
                ));
            }
            inter.insert(key, e);
        }
        let mut tmap = BTreeMap::new();
        for t in timing {
            let key = pair_key(&t.constraint_a, &t.constraint_b);
            if tmap.contains_key(&key) {
                return Err(KbError::invalid(
                    "timing_conflicts.json",
                    format!("duplicate conflict {} / {}", key.0, key.1),
                ));
            }
            tmap.insert(key, t);
        }
        Ok(Self {
            drugs: drug_map,
            interactions: inter,
            timing: tmap,
        })
    }

    pub fn drug(&self, id: &str) -> Option<&DrugEntry> {
        self.drugs.get(id)
    }

    pub fn drugs(&self) -> impl Iterator<Item = &DrugEntry> {
        self.drugs.values()
    }

    /// Order of the two ids does not matter.
    pub fn interaction(&self, a: &str, b: &str) -> Option<&InteractionEntry> {
        self.interactions.get(&pair_key(a, b))
    }

    pub fn interactions(&self) -> impl Iterator<Item = &InteractionEntry> {
        self.interactions.values()
    }

    pub fn timing_conflict(&self, a: &str, b: &str) -> Option<&TimingConflict> {
        self.timing.get(&pair_key(a, b))
    }
}
