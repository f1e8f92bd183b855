//! Backend that answers from recorded call logs, keyed by stage and unit.

use std::collections::HashMap;
use std::path::Path;

use super::transcript::{jsonl_files, read_jsonl, TranscriptError, TranscriptRecord};
use super::{Backend, BackendError, Completion};
use crate::types::{GenerationParams, ModelRequest, StageTag};

#[derive(Debug, Default, Clone)]
pub struct ScriptedBackend {
    responses: HashMap<(StageTag, String), TranscriptRecord>,
}

impl ScriptedBackend {
    /// Later records for the same key replace earlier ones.
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut responses = HashMap::new();
        for r in records {
            responses.insert((r.stage, r.unit.clone()), r);
        }
        Self { responses }
    }

    /// Loads every `*.jsonl` file under `path` (or `path` itself).
    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let mut records = Vec::new();
        for file in jsonl_files(path)? {
            records.extend(read_jsonl::<TranscriptRecord>(&file)?);
        }
        Ok(Self::from_records(records))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ModelRequest, _: &GenerationParams) -> Result<Completion, BackendError> {
        match self.responses.get(&(req.stage, req.unit_id.clone())) {
            Some(r) => Ok(Completion {
                text: r.response.clone(),
                input_units: r.usage.map(|u| u.input_units),
                output_units: r.usage.map(|u| u.output_units),
            }),
            None => Err(BackendError::ReplayMiss {
                stage: req.stage,
                unit: req.unit_id.clone(),
            }),
        }
    }
}
