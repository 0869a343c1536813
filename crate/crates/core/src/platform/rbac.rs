//! Static role × endpoint permission matrix. Anything not granted is denied.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::auth::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Endpoint {
    pub method: &'static str,
    /// Route pattern relative to `/api/v1`.
    pub path: &'static str,
}

impl Endpoint {
    pub const fn new(method: &'static str, path: &'static str) -> Self {
        Self { method, path }
    }

    pub fn key(&self) -> String {
        format!("{} {}", self.method, self.path)
    }
}

pub const LOGIN: Endpoint = Endpoint::new("POST", "/auth/login");
pub const CASES_GENERATE: Endpoint = Endpoint::new("POST", "/cases/generate");
pub const CASES_GET: Endpoint = Endpoint::new("GET", "/cases/{id}");
pub const CASES_APPROVE: Endpoint = Endpoint::new("POST", "/cases/{id}/approve");
pub const SESSIONS_OPEN: Endpoint = Endpoint::new("POST", "/sessions");
pub const SESSIONS_TURN: Endpoint = Endpoint::new("POST", "/sessions/{id}/turns");
pub const SESSIONS_REPLAY: Endpoint = Endpoint::new("GET", "/sessions/{id}/replay");
pub const EXAMS_RECOMMEND: Endpoint = Endpoint::new("POST", "/exams/recommend");
pub const EXAMS_ORDER: Endpoint = Endpoint::new("POST", "/exams/orders");
pub const DIAGNOSES: Endpoint = Endpoint::new("POST", "/diagnoses");
pub const PRESCRIPTIONS: Endpoint = Endpoint::new("POST", "/prescriptions");
pub const PRESCRIPTIONS_REVIEW: Endpoint = Endpoint::new("POST", "/prescriptions/{id}/review");
pub const EVALUATIONS: Endpoint = Endpoint::new("POST", "/evaluations/{session}");
pub const PROGRESS: Endpoint = Endpoint::new("GET", "/users/{id}/progress");
pub const ADMIN_AUDIT: Endpoint = Endpoint::new("GET", "/admin/audit");
pub const ADMIN_USERS: Endpoint = Endpoint::new("POST", "/admin/users");

/// Every declared endpoint. Login is public and never checked against the
/// matrix.
pub const ENDPOINTS: [Endpoint; 16] = [
    LOGIN,
    CASES_GENERATE,
    CASES_GET,
    CASES_APPROVE,
    SESSIONS_OPEN,
    SESSIONS_TURN,
    SESSIONS_REPLAY,
    EXAMS_RECOMMEND,
    EXAMS_ORDER,
    DIAGNOSES,
    PRESCRIPTIONS,
    PRESCRIPTIONS_REVIEW,
    EVALUATIONS,
    PROGRESS,
    ADMIN_AUDIT,
    ADMIN_USERS,
];

const TRAINING: [Endpoint; 10] = [
    CASES_GET,
    SESSIONS_OPEN,
    SESSIONS_TURN,
    SESSIONS_REPLAY,
    EXAMS_RECOMMEND,
    EXAMS_ORDER,
    DIAGNOSES,
    PRESCRIPTIONS,
    PRESCRIPTIONS_REVIEW,
    EVALUATIONS,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

/// Roles are plain strings so deployments can add levels beyond the three
/// seeded ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionMatrix {
    grants: BTreeMap<String, BTreeSet<String>>,
}

impl PermissionMatrix {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn seeded() -> Self {
        let mut m = Self::empty();
        for e in ENDPOINTS.iter().filter(|e| **e != LOGIN) {
            m.grant(Role::Administrator.as_str(), e);
        }
        for e in TRAINING.iter().chain([&CASES_GENERATE, &CASES_APPROVE, &PROGRESS]) {
            m.grant(Role::SupervisingPhysician.as_str(), e);
        }
        for e in TRAINING.iter().chain([&PROGRESS]) {
            m.grant(Role::Trainee.as_str(), e);
        }
        m
    }

    pub fn grant(&mut self, role: &str, endpoint: &Endpoint) {
        self.grants.entry(role.to_string()).or_default().insert(endpoint.key());
    }

    pub fn authorize(&self, role: &str, endpoint: &Endpoint) -> Decision {
        match self.grants.get(role) {
            Some(keys) if keys.contains(&endpoint.key()) => Decision::Allow,
            _ => Decision::Deny,
        }
    }

    pub fn is_granted(&self, role: &str, endpoint: &Endpoint) -> bool {
        self.authorize(role, endpoint) == Decision::Allow
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.grants.keys().map(String::as_str)
    }

    pub fn granted(&self, role: &str) -> impl Iterator<Item = &str> {
        self.grants.get(role).into_iter().flatten().map(String::as_str)
    }
}
