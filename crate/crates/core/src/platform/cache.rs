//! Key-value cache with optimistic, version-checked writes.

use std::collections::HashMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry<V> {
    pub key: String,
    pub value: V,
    pub version: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("version conflict on {key}: expected {expected}, current {current}")]
pub struct VersionConflict {
    pub key: String,
    pub expected: u64,
    pub current: u64,
}

#[derive(Debug)]
pub struct VersionedCache<V> {
    entries: RwLock<HashMap<String, CacheEntry<V>>>,
}

impl<V> Default for VersionedCache<V> {
    fn default() -> Self {
        Self {
            entries: RwLock::default(),
        }
    }
}

impl<V: Clone> VersionedCache<V> {
    pub fn new() -> Self {
        Self::default()
    }

    fn current(map: &HashMap<String, CacheEntry<V>>, key: &str) -> u64 {
        map.get(key).map_or(0, |e| e.version)
    }

    /// Writes `value` if the key's version is still `expected_version`
    /// (0 for an absent key). The version is checked once under the read
    /// lock and again under the write lock. Returns the new version.
    pub fn put(&self, key: &str, value: V, expected_version: u64) -> Result<u64, VersionConflict> {
        let conflict = |current| VersionConflict {
            key: key.into(),
            expected: expected_version,
            current,
        };
        let seen = Self::current(&self.entries.read(), key);
        if seen != expected_version {
            return Err(conflict(seen));
        }
        let mut entries = self.entries.write();
        let current = Self::current(&entries, key);
        if current != expected_version {
            return Err(conflict(current));
        }
        let version = current + 1;
        entries.insert(
            key.to_string(),
            CacheEntry {
                key: key.to_string(),
                value,
                version,
            },
        );
        Ok(version)
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry<V>> {
        self.entries.read().get(key).cloned()
    }

    pub fn version(&self, key: &str) -> u64 {
        Self::current(&self.entries.read(), key)
    }

    /// Read-modify-write, retrying on conflict.
    pub fn update(&self, key: &str, mut f: impl FnMut(Option<&V>) -> V) -> u64 {
        loop {
            let entry = self.get(key);
            let expected = entry.as_ref().map_or(0, |e| e.version);
            let next = f(entry.as_ref().map(|e| &e.value));
            if let Ok(v) = self.put(key, next, expected) {
                return v;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
