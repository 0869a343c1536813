use std::collections::HashMap;

use parking_lot::Mutex;

/// Sequential, prefix-scoped identifiers (`case-000001`, `sess-000002`, ...).
///
/// A non-empty namespace is inserted between prefix and counter so that ids
/// minted by separate server runs do not collide in a persistent store.
#[derive(Debug, Default)]
pub struct IdGenerator {
    namespace: String,
    counters: Mutex<HashMap<String, u64>>,
}

impl IdGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_namespace(namespace: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            counters: Mutex::default(),
        }
    }

    pub fn next(&self, prefix: &str) -> String {
        let mut counters = self.counters.lock();
        let n = counters.entry(prefix.to_string()).or_insert(0);
        *n += 1;
        if self.namespace.is_empty() {
            format!("{prefix}-{:06}", *n)
        } else {
            format!("{prefix}-{}-{:06}", self.namespace, *n)
        }
    }
}
