//! Append-only call log. One JSON record per line; the same files feed the
//! scripted backend.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ledger::UsageLedger;
use crate::types::{ModelRequest, Part, StageTag, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub stage: StageTag,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub images: usize,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record in {path} at byte offset {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
}

/// Stable digest of a request's content. Images contribute their video id
/// and timestamp, not their bytes.
pub fn request_digest(req: &ModelRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.stage.as_str().as_bytes());
    h.update([0]);
    h.update(req.unit_id.as_bytes());
    for part in &req.parts {
        match part {
            Part::Text { text } => {
                h.update(b"\0T");
                h.update(text.as_bytes());
            }
            Part::Image { frame } => {
                h.update(b"\0I");
                h.update(frame.video_id.as_bytes());
                h.update(format!("@{:.3}", frame.timestamp).as_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Writer that syncs every record to disk before returning.
#[derive(Debug)]
pub struct TranscriptLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl TranscriptLog {
    pub fn open(path: &Path) -> Result<Self, TranscriptError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| TranscriptError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TranscriptError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), TranscriptError> {
        append_trace(record, &self.file, &self.path)
    }
}

/// Appends one record as a single line and syncs it.
pub fn append_trace<T: Serialize>(record: &T, file: &Mutex<File>, path: &Path) -> Result<(), TranscriptError> {
    let mut line = serde_json::to_string(record).expect("records always serialize");
    line.push('\n');
    let io = |source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = file.lock().unwrap();
    f.write_all(line.as_bytes()).map_err(io)?;
    f.sync_data().map_err(io)
}

/// Reads newline-delimited records, failing on the first corrupt line with
/// its byte offset. Blank lines are skipped.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TranscriptError> {
    let (records, err) = read_jsonl_prefix(path)?;
    match err {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

/// Like [`read_jsonl`] but also returns the records preceding a corrupt
/// line.
pub fn read_jsonl_prefix<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<(Vec<T>, Option<TranscriptError>), TranscriptError> {
    let io = |source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io)?;
        if n == 0 {
            return Ok((out, None));
        }
        let complete = buf.ends_with(b"\n");
        let text = String::from_utf8_lossy(&buf);
        let trimmed = text.trim();
        if !trimmed.is_empty() {
            let parsed = if complete {
                serde_json::from_str::<T>(trimmed).map_err(|e| e.to_string())
            } else {
                Err("truncated record (missing newline)".to_string())
            };
            match parsed {
                Ok(v) => out.push(v),
                Err(reason) => {
                    return Ok((
                        out,
                        Some(TranscriptError::Corrupt {
                            path: path.to_path_buf(),
                            offset,
                            reason,
                        }),
                    ))
                }
            }
        }
        offset += n as u64;
    }
}

/// Every `*.jsonl` file below `root`, sorted by path.
pub fn jsonl_files(root: &Path) -> Result<Vec<PathBuf>, TranscriptError> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|source| TranscriptError::Io {
            path: dir.clone(),
            source,
        })?;
        for e in entries.filter_map(Result::ok) {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "jsonl") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Rebuilds a ledger from logged records.
pub fn replay_ledger(records: &[TranscriptRecord]) -> UsageLedger {
    let mut ledger = UsageLedger::default();
    for r in records {
        if let Some(u) = &r.usage {
            ledger.record(r.stage, u);
        }
    }
    ledger
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(unit: &str, calls: u64) -> TranscriptRecord {
        TranscriptRecord {
            stage: StageTag::SceneSplit,
            unit: unit.into(),
            digest: None,
            model: None,
            images: 20,
            response: "[2. Single: yes/no]: yes".into(),
            usage: Some(Usage {
                calls,
                input_units: 100 * calls,
                output_units: 7,
                cost_nanos: 11,
            }),
        }
    }

    #[test]
    fn appends_in_order_and_replays_totals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let log = TranscriptLog::open(&path).unwrap();
        log.append(&rec("v/u0000", 1)).unwrap();
        log.append(&rec("v/u0001", 1)).unwrap();
        let back: Vec<TranscriptRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].unit, "v/u0000");
        assert_eq!(back[1].unit, "v/u0001");
        let ledger = replay_ledger(&back);
        // Sum oracle.
        assert_eq!(ledger.total().input_units, 200);
        assert_eq!(ledger.total().calls, 2);
        assert_eq!(ledger.total().cost_nanos, 22);
    }

    #[test]
    fn empty_trace_has_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        TranscriptLog::open(&path).unwrap();
        let back: Vec<TranscriptRecord> = read_jsonl(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn truncated_tail_reports_offset_and_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let first = serde_json::to_string(&rec("a", 1)).unwrap() + "\n";
        let second = serde_json::to_string(&rec("b", 1)).unwrap();
        std::fs::write(&path, format!("{first}{}", &second[..second.len() / 2])).unwrap();
        let (prefix, err) = read_jsonl_prefix::<TranscriptRecord>(&path).unwrap();
        assert_eq!(prefix.len(), 1);
        match err {
            Some(TranscriptError::Corrupt { offset, .. }) => assert_eq!(offset, first.len() as u64),
            other => panic!("expected corrupt error, got {other:?}"),
        }
        assert!(read_jsonl::<TranscriptRecord>(&path).is_err());
    }

    #[test]
    fn digest_ignores_image_bytes_but_not_text() {
        use crate::types::{FrameRef, ImageHandle, ModelRequest, Part};
        let frame = |b: u8| FrameRef {
            video_id: "v".into(),
            timestamp: 1.5,
            image: ImageHandle::inline("image/png", vec![b]),
        };
        let a = ModelRequest::new(StageTag::Answer, "u", vec![Part::text("x"), Part::image(frame(1))]);
        let b = ModelRequest::new(StageTag::Answer, "u", vec![Part::text("x"), Part::image(frame(2))]);
        let c = ModelRequest::new(StageTag::Answer, "u", vec![Part::text("y"), Part::image(frame(1))]);
        assert_eq!(request_digest(&a), request_digest(&b));
        assert_ne!(request_digest(&a), request_digest(&c));
    }
}
