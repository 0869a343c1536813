//! File-driven deterministic provider.
//!
//! A script is a JSON array of entries:
//!
//! ```json
//! [
//!   {"match": {"digest": "<sha256 hex of the prompt>"}, "reply": "..."},
//!   {"match": {"pattern": "(?s)Latest question: .*sleep"}, "reply": "...", "delay_ms": 20}
//! ]
//! ```
//!
//! Exact digests are consulted first, then patterns in file order. Prompts
//! nothing matches get a reply starting with [`UNSCRIPTED_MARKER`].

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::provider::{LlmProvider, ProviderRequest, TransportError};

pub const UNSCRIPTED_MARKER: &str = "UNSCRIPTED:";

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScriptError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScriptError::Parse { line, .. } => Some(*line),
            ScriptError::Io { .. } => None,
        }
    }
}

/// Lower-case hex SHA-256 of the prompt text.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatch {
    digest: Option<String>,
    pattern: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(rename = "match")]
    matcher: RawMatch,
    reply: String,
    delay_ms: Option<u64>,
}

#[derive(Debug, Clone)]
struct Reply {
    text: String,
    delay: Option<Duration>,
}

#[derive(Debug)]
pub struct ScriptedProvider {
    id: String,
    by_digest: HashMap<String, Reply>,
    patterns: Vec<(Regex, Reply)>,
}

/// Line numbers of each top-level entry's `"match"` key, in order.
fn entry_lines(text: &str) -> Vec<usize> {
    let key = Regex::new(r#""match"\s*:"#).expect("static regex");
    key.find_iter(text)
        .map(|m| text[..m.start()].matches('\n').count() + 1)
        .collect()
}

pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedProvider, ScriptError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScriptedProvider::from_json(&text)
}

impl ScriptedProvider {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let entries: Vec<RawEntry> = serde_json::from_str(text).map_err(|e| ScriptError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let lines = entry_lines(text);
        let line_of = |i: usize| lines.get(i).copied().unwrap_or(1);

        let mut by_digest = HashMap::new();
        let mut patterns = Vec::new();
        let mut seen_patterns = HashSet::new();
        for (i, entry) in entries.into_iter().enumerate() {
            let reply = Reply {
                text: entry.reply,
                delay: entry.delay_ms.map(Duration::from_millis),
            };
            match (entry.matcher.digest, entry.matcher.pattern) {
                (Some(digest), None) => {
                    let digest = digest.to_ascii_lowercase();
                    if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                        return Err(ScriptError::Parse {
                            line: line_of(i),
                            message: format!("digest {digest:?} is not a SHA-256 hex string"),
                        });
                    }
                    if by_digest.insert(digest.clone(), reply).is_some() {
                        return Err(ScriptError::Parse {
                            line: line_of(i),
                            message: format!("duplicate digest {digest}"),
                        });
                    }
                }
                (None, Some(pattern)) => {
                    if !seen_patterns.insert(pattern.clone()) {
                        return Err(ScriptError::Parse {
                            line: line_of(i),
                            message: format!("duplicate pattern {pattern:?}"),
                        });
                    }
                    let re = Regex::new(&pattern).map_err(|e| ScriptError::Parse {
                        line: line_of(i),
                        message: format!("invalid pattern: {e}"),
                    })?;
                    patterns.push((re, reply));
                }
                _ => {
                    return Err(ScriptError::Parse {
                        line: line_of(i),
                        message: "match needs exactly one of digest or pattern".into(),
                    })
                }
            }
        }
        Ok(Self {
            id: "scripted".into(),
            by_digest,
            patterns,
        })
    }

    /// The demo script shipped with the crate.
    pub fn demo() -> Self {
        Self::from_json(crate::kb::seed::DEMO_SCRIPT).expect("embedded demo script is valid")
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn lookup(&self, prompt: &str) -> Option<&Reply> {
        let digest = prompt_digest(prompt);
        self.by_digest
            .get(&digest)
            .or_else(|| self.patterns.iter().find(|(re, _)| re.is_match(prompt)).map(|(_, r)| r))
    }

    /// The reply text for `prompt`, without any scripted delay.
    pub fn reply_for(&self, prompt: &str) -> String {
        match self.lookup(prompt) {
            Some(reply) => reply.text.clone(),
            None => format!("{UNSCRIPTED_MARKER} {}", &prompt_digest(prompt)[..16]),
        }
    }
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn call(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        if let Some(delay) = self.lookup(&request.prompt).and_then(|r| r.delay) {
            tokio::time::sleep(delay).await;
        }
        Ok(self.reply_for(&request.prompt))
    }
}
