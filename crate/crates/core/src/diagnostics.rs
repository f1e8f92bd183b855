use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::types::StageTag;

/// A non-fatal problem tied to one unit of work.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: StageTag,
    pub unit: String,
    pub message: String,
}

/// Thread-safe collector. Every entry is also emitted as a tracing warning.
#[derive(Debug, Default)]
pub struct Diagnostics {
    entries: Mutex<Vec<Diagnostic>>,
}

impl Diagnostics {
    pub fn warn(&self, stage: StageTag, unit: &str, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(stage = %stage, unit, "{message}");
        self.entries.lock().unwrap().push(Diagnostic {
            stage,
            unit: unit.to_string(),
            message,
        });
    }

    pub fn warn_all(&self, stage: StageTag, unit: &str, messages: impl IntoIterator<Item = String>) {
        for m in messages {
            self.warn(stage, unit, m);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries in a stable order, independent of thread scheduling.
    pub fn sorted(&self) -> Vec<Diagnostic> {
        let mut v = self.entries.lock().unwrap().clone();
        v.sort();
        v
    }
}
