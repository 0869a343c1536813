//! Persistence behind one interface. Structured records (users, sessions,
//! reports, ...) and documents (cases, transcripts) live in separate
//! families. Payloads are kept as the exact bytes handed in.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("schema violation for {kind}: {detail}")]
    SchemaViolation { kind: RecordKind, detail: String },
    #[error("{kind} {id} not found")]
    NotFound { kind: RecordKind, id: String },
    #[error("storage I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad export bundle: {0}")]
    Bundle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Record,
    Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    User,
    Session,
    Report,
    ExamOrder,
    Diagnosis,
    Prescription,
    Review,
    Progress,
    Case,
    Transcript,
}

impl RecordKind {
    pub const ALL: [RecordKind; 10] = [
        RecordKind::User,
        RecordKind::Session,
        RecordKind::Report,
        RecordKind::ExamOrder,
        RecordKind::Diagnosis,
        RecordKind::Prescription,
        RecordKind::Review,
        RecordKind::Progress,
        RecordKind::Case,
        RecordKind::Transcript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::User => "user",
            RecordKind::Session => "session",
            RecordKind::Report => "report",
            RecordKind::ExamOrder => "exam_order",
            RecordKind::Diagnosis => "diagnosis",
            RecordKind::Prescription => "prescription",
            RecordKind::Review => "review",
            RecordKind::Progress => "progress",
            RecordKind::Case => "case",
            RecordKind::Transcript => "transcript",
        }
    }

    pub fn family(self) -> Family {
        match self {
            RecordKind::Case | RecordKind::Transcript => Family::Document,
            _ => Family::Record,
        }
    }

    /// Dotted path of the field that names the record.
    pub fn key_field(self) -> &'static str {
        match self {
            RecordKind::Report | RecordKind::Transcript => "session_id",
            RecordKind::Progress => "user_id",
            RecordKind::Review => "draft_id",
            RecordKind::Case => "case.id",
            _ => "id",
        }
    }

    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            RecordKind::User => &["id", "login", "role", "credential_hash"],
            RecordKind::Session => &["id", "case_id", "mode", "turns", "status"],
            RecordKind::Report => &["session_id", "case_id", "dims", "composite", "feedback"],
            RecordKind::ExamOrder => &["id", "case_ref", "items", "status"],
            RecordKind::Diagnosis => &["id", "session_id", "entered", "ranking"],
            RecordKind::Prescription => &["id", "case_ref", "dx", "lines", "round"],
            RecordKind::Review => &["draft_id", "round", "findings", "verdict"],
            RecordKind::Progress => &["user_id", "reports", "trends"],
            RecordKind::Case => &["schema_version", "case.id", "case.disorder_code", "case.symptoms"],
            RecordKind::Transcript => &["session_id", "case_id", "entries"],
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn lookup<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, key| v.get(key))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

/// Checks the payload against the kind's required fields and returns its id.
pub fn check_schema(kind: RecordKind, payload: &str) -> Result<String, StoreError> {
    let violation = |detail: String| StoreError::SchemaViolation { kind, detail };
    let value: Value = serde_json::from_str(payload).map_err(|e| violation(format!("not JSON: {e}")))?;
    if !value.is_object() {
        return Err(violation("payload must be a JSON object".into()));
    }
    for field in kind.required_fields() {
        match lookup(&value, field) {
            None | Some(Value::Null) => return Err(violation(format!("missing required field {field}"))),
            Some(_) => {}
        }
    }
    let id = lookup(&value, kind.key_field())
        .and_then(Value::as_str)
        .ok_or_else(|| violation(format!("{} must be a string", kind.key_field())))?;
    if !valid_id(id) {
        return Err(violation(format!("id {id:?} has unsupported characters")));
    }
    Ok(id.to_string())
}

pub trait Backend: Send + Sync {
    fn put(&self, kind: RecordKind, id: &str, payload: &str) -> Result<(), StoreError>;
    fn get(&self, kind: RecordKind, id: &str) -> Result<Option<String>, StoreError>;
    fn ids(&self, kind: RecordKind) -> Result<Vec<String>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryBackend {
    families: RwLock<BTreeMap<Family, BTreeMap<(RecordKind, String), String>>>,
}

impl Backend for MemoryBackend {
    fn put(&self, kind: RecordKind, id: &str, payload: &str) -> Result<(), StoreError> {
        self.families
            .write()
            .entry(kind.family())
            .or_default()
            .insert((kind, id.to_string()), payload.to_string());
        Ok(())
    }

    fn get(&self, kind: RecordKind, id: &str) -> Result<Option<String>, StoreError> {
        Ok(self
            .families
            .read()
            .get(&kind.family())
            .and_then(|f| f.get(&(kind, id.to_string())))
            .cloned())
    }

    fn ids(&self, kind: RecordKind) -> Result<Vec<String>, StoreError> {
        Ok(self
            .families
            .read()
            .get(&kind.family())
            .map(|f| f.keys().filter(|(k, _)| *k == kind).map(|(_, id)| id.clone()).collect())
            .unwrap_or_default())
    }
}

/// One file per record under `<root>/<family>s/<kind>/<id>.json`.
#[derive(Debug)]
pub struct FileBackend {
    root: PathBuf,
}

impl FileBackend {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn dir(&self, kind: RecordKind) -> PathBuf {
        let family = match kind.family() {
            Family::Record => "records",
            Family::Document => "documents",
        };
        self.root.join(family).join(kind.as_str())
    }
}

impl Backend for FileBackend {
    fn put(&self, kind: RecordKind, id: &str, payload: &str) -> Result<(), StoreError> {
        let dir = self.dir(kind);
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!(".{id}.tmp"));
        std::fs::write(&tmp, payload)?;
        std::fs::rename(&tmp, dir.join(format!("{id}.json")))?;
        Ok(())
    }

    fn get(&self, kind: RecordKind, id: &str) -> Result<Option<String>, StoreError> {
        match std::fs::read_to_string(self.dir(kind).join(format!("{id}.json"))) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn ids(&self, kind: RecordKind) -> Result<Vec<String>, StoreError> {
        let dir = self.dir(kind);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json").filter(|_| !name.starts_with('.')) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub kind: RecordKind,
    pub id: String,
    /// Payload text exactly as stored.
    pub payload: String,
}

pub const BUNDLE_FORMAT: &str = "psysim-export";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub format: String,
    pub version: u32,
    pub entries: Vec<BundleEntry>,
}

pub struct DataStore {
    backend: Box<dyn Backend>,
}

impl DataStore {
    pub fn in_memory() -> Self {
        Self::with_backend(Box::<MemoryBackend>::default())
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self::with_backend(Box::new(FileBackend::open(root.as_ref())?)))
    }

    pub fn with_backend(backend: Box<dyn Backend>) -> Self {
        Self { backend }
    }

    /// Validates and persists the payload; returns its id.
    pub fn store(&self, kind: RecordKind, payload: &str) -> Result<String, StoreError> {
        let id = check_schema(kind, payload)?;
        self.backend.put(kind, &id, payload)?;
        Ok(id)
    }

    pub fn store_value<T: Serialize>(&self, kind: RecordKind, value: &T) -> Result<String, StoreError> {
        let payload = serde_json::to_string(value).map_err(|e| StoreError::SchemaViolation {
            kind,
            detail: e.to_string(),
        })?;
        self.store(kind, &payload)
    }

    pub fn retrieve(&self, kind: RecordKind, id: &str) -> Result<String, StoreError> {
        let not_found = || StoreError::NotFound { kind, id: id.into() };
        if !valid_id(id) {
            return Err(not_found());
        }
        self.backend.get(kind, id)?.ok_or_else(not_found)
    }

    pub fn retrieve_value<T: serde::de::DeserializeOwned>(&self, kind: RecordKind, id: &str) -> Result<T, StoreError> {
        let text = self.retrieve(kind, id)?;
        serde_json::from_str(&text).map_err(|e| StoreError::SchemaViolation {
            kind,
            detail: e.to_string(),
        })
    }

    pub fn ids(&self, kind: RecordKind) -> Result<Vec<String>, StoreError> {
        self.backend.ids(kind)
    }

    pub fn export(&self) -> Result<ExportBundle, StoreError> {
        let mut entries = Vec::new();
        for kind in RecordKind::ALL {
            for id in self.ids(kind)? {
                let payload = self.retrieve(kind, &id)?;
                entries.push(BundleEntry { kind, id, payload });
            }
        }
        Ok(ExportBundle {
            format: BUNDLE_FORMAT.into(),
            version: 1,
            entries,
        })
    }

    /// Restores every entry; the whole bundle is checked before anything is
    /// written. Returns the number of entries imported.
    pub fn import(&self, bundle: &ExportBundle) -> Result<usize, StoreError> {
        if bundle.format != BUNDLE_FORMAT || bundle.version != 1 {
            return Err(StoreError::Bundle(format!("unsupported {} v{}", bundle.format, bundle.version)));
        }
        for entry in &bundle.entries {
            let id = check_schema(entry.kind, &entry.payload)?;
            if id != entry.id {
                return Err(StoreError::Bundle(format!("entry {} carries id {id}", entry.id)));
            }
        }
        for entry in &bundle.entries {
            self.backend.put(entry.kind, &entry.id, &entry.payload)?;
        }
        Ok(bundle.entries.len())
    }
}
