//! Append-only audit trail. Each record carries the digest of its
//! predecessor, so edits to a persisted log are detected on load.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{Clock, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Login,
    CaseGenerate,
    CaseApprove,
    PrescriptionReview,
    EvaluationWrite,
    UserCreate,
    AccessDenied,
}

impl AuditAction {
    pub const CRITICAL: [AuditAction; 7] = [
        AuditAction::Login,
        AuditAction::CaseGenerate,
        AuditAction::CaseApprove,
        AuditAction::PrescriptionReview,
        AuditAction::EvaluationWrite,
        AuditAction::UserCreate,
        AuditAction::AccessDenied,
    ];
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("audit store unavailable: {0}")]
    AuditStoreUnavailable(String),
    #[error("audit chain broken at record {0}")]
    ChainBroken(u64),
    #[error("audit records are append-only")]
    AppendOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub id: String,
    pub actor: String,
    pub action: AuditAction,
    pub target: String,
    pub timestamp: Timestamp,
    pub outcome: String,
    pub prev_digest: String,
    pub digest: String,
}

const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

fn digest_of(r: &AuditRecord) -> String {
    let body = serde_json::json!({
        "seq": r.seq,
        "id": r.id,
        "actor": r.actor,
        "action": r.action,
        "target": r.target,
        "timestamp": r.timestamp,
        "outcome": r.outcome,
        "prev_digest": r.prev_digest,
    });
    hex::encode(Sha256::digest(body.to_string().as_bytes()))
}

/// Checks sequence numbers, digests, links and timestamp order.
pub fn verify_chain(records: &[AuditRecord]) -> Result<(), AuditError> {
    let mut prev = GENESIS.to_string();
    let mut last_ts = 0;
    for (i, r) in records.iter().enumerate() {
        let ok = r.seq == i as u64 + 1 && r.prev_digest == prev && r.digest == digest_of(r) && r.timestamp >= last_ts;
        if !ok {
            return Err(AuditError::ChainBroken(r.seq));
        }
        prev = r.digest.clone();
        last_ts = r.timestamp;
    }
    Ok(())
}

struct Inner {
    records: Vec<AuditRecord>,
    file: Option<File>,
}

pub struct AuditLog {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    available: AtomicBool,
}

impl AuditLog {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                file: None,
            }),
            path: None,
            clock,
            available: AtomicBool::new(true),
        }
    }

    /// Opens (or creates) a JSON Lines log and verifies the existing chain.
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let unavailable = |e: std::io::Error| AuditError::AuditStoreUnavailable(e.to_string());
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(unavailable)?);
            for line in reader.lines() {
                let line = line.map_err(unavailable)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: AuditRecord = serde_json::from_str(&line)
                    .map_err(|_| AuditError::ChainBroken(records.len() as u64 + 1))?;
                records.push(record);
            }
            verify_chain(&records)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(unavailable)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                records,
                file: Some(file),
            }),
            path: Some(path),
            clock,
            available: AtomicBool::new(true),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Fault injection: while unavailable every append fails.
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    /// Appends one record. Callers commit the guarded operation only after
    /// this succeeds.
    pub fn record(
        &self,
        actor: &str,
        action: AuditAction,
        target: &str,
        outcome: &str,
    ) -> Result<AuditRecord, AuditError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(AuditError::AuditStoreUnavailable("audit backend offline".into()));
        }
        let mut inner = self.inner.lock();
        let (seq, prev_digest, last_ts) = match inner.records.last() {
            Some(r) => (r.seq + 1, r.digest.clone(), r.timestamp),
            None => (1, GENESIS.to_string(), 0),
        };
        let mut record = AuditRecord {
            seq,
            id: format!("audit-{seq:06}"),
            actor: actor.into(),
            action,
            target: target.into(),
            timestamp: self.clock.now_ms().max(last_ts),
            outcome: outcome.into(),
            prev_digest,
            digest: String::new(),
        };
        record.digest = digest_of(&record);
        if let Some(file) = inner.file.as_mut() {
            let line = serde_json::to_string(&record).expect("audit record serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| AuditError::AuditStoreUnavailable(e.to_string()))?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.inner.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, action: AuditAction) -> usize {
        self.inner.lock().records.iter().filter(|r| r.action == action).count()
    }

    pub fn verify(&self) -> Result<(), AuditError> {
        verify_chain(&self.inner.lock().records)
    }
}
