//! On-disk caption stores: one directory per video holding phase
//! checkpoints, the final scenes, the character registry and frames.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::transcript::{read_jsonl, TranscriptError};
use crate::types::{CharacterRecord, CharacterRegistry, FrameRef, ImageHandle, Scene, Seconds};

pub const SCHEMA_VERSION: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";
pub const FRAMES_DIR: &str = "frames";
pub const LOCK_FILE: &str = ".lock";
pub const CALLS_FILE: &str = "calls.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path} has schema version {found}, expected {expected}; migration needed")]
    MigrationNeeded { path: PathBuf, found: u32, expected: u32 },
    #[error("corrupt record in {path} at byte offset {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
    #[error("malformed {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("store {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("no caption store for video {0}")]
    Missing(String),
    #[error("store {path} belongs to a different video: {reason}")]
    Mismatch { path: PathBuf, reason: String },
}

impl From<TranscriptError> for StoreError {
    fn from(e: TranscriptError) -> Self {
        match e {
            TranscriptError::Io { path, source } => StoreError::Io { path, source },
            TranscriptError::Corrupt { path, offset, reason } => StoreError::Corrupt { path, offset, reason },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Phases
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Split,
    Characters,
    Describe,
    Reduce,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Split, Phase::Characters, Phase::Describe, Phase::Reduce];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Split => "split",
            Phase::Characters => "characters",
            Phase::Describe => "describe",
            Phase::Reduce => "reduce",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

/// Completed phases. Monotone: a phase is only marked after all earlier
/// ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMarkers {
    pub split: bool,
    pub characters: bool,
    pub describe: bool,
    pub reduce: bool,
}

impl PhaseMarkers {
    pub fn is_done(&self, p: Phase) -> bool {
        match p {
            Phase::Split => self.split,
            Phase::Characters => self.characters,
            Phase::Describe => self.describe,
            Phase::Reduce => self.reduce,
        }
    }

    pub fn mark(&mut self, p: Phase) {
        for q in Phase::ALL {
            if q <= p {
                match q {
                    Phase::Split => self.split = true,
                    Phase::Characters => self.characters = true,
                    Phase::Describe => self.describe = true,
                    Phase::Reduce => self.reduce = true,
                }
            }
        }
    }

    pub fn next(&self) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| !self.is_done(*p))
    }

    pub fn is_monotone(&self) -> bool {
        let done: Vec<bool> = Phase::ALL.iter().map(|p| self.is_done(*p)).collect();
        done.windows(2).all(|w| w[0] || !w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub schema_version: u32,
    pub video_id: String,
    pub duration: Seconds,
    pub phases: PhaseMarkers,
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Character record as persisted: the frame lives in a file next to the
/// store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCharacter {
    pub name: String,
    pub description: String,
    pub frame_path: String,
    pub frame_time: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistryFile {
    records: Vec<StoredCharacter>,
    rename_map: BTreeMap<String, String>,
}

/// The persisted caption "article" for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionStore {
    pub video_id: String,
    pub duration: Seconds,
    pub scenes: Vec<Scene>,
    pub registry: CharacterRegistry,
    pub phases: PhaseMarkers,
}

impl CaptionStore {
    pub fn is_complete(&self) -> bool {
        self.phases.reduce
    }

    pub fn needs_resume(&self) -> bool {
        !self.is_complete()
    }
}

// ---------------------------------------------------------------------------
// Directory handle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StoreDir {
    dir: PathBuf,
    video_id: String,
}

/// Exclusive writer lock; released when dropped.
#[derive(Debug)]
pub struct StoreLock {
    file: File,
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
        let _ = std::fs::remove_file(&self.path);
    }
}

impl StoreDir {
    pub fn new(root: &Path, video_id: &str) -> Self {
        Self {
            dir: root.join(video_id),
            video_id: video_id.to_string(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.file(name).exists()
    }

    pub fn create(&self) -> Result<(), StoreError> {
        std::fs::create_dir_all(self.dir.join(FRAMES_DIR)).map_err(io_err(&self.dir))
    }

    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        self.create()?;
        let path = self.file(LOCK_FILE);
        let file = File::create(&path).map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(StoreLock { file, path }),
            Err(std::fs::TryLockError::WouldBlock) => Err(StoreError::Locked(self.dir.clone())),
            Err(std::fs::TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }

    /// Writes via a temporary file and rename so readers never see a
    /// partial file.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.create()?;
        let path = self.file(name);
        let tmp = self.file(&format!("{name}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        let mut s = serde_json::to_string_pretty(value).expect("store records serialize");
        s.push('\n');
        self.write_atomic(name, s.as_bytes())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, StoreError> {
        let path = self.file(name);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
            path,
            reason: e.to_string(),
        })
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<(), StoreError> {
        let mut s = String::new();
        for r in records {
            s.push_str(&serde_json::to_string(r).expect("store records serialize"));
            s.push('\n');
        }
        self.write_atomic(name, s.as_bytes())
    }

    pub fn read_jsonl<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<T>, StoreError> {
        Ok(read_jsonl(&self.file(name))?)
    }

    pub fn read_meta(&self) -> Result<Option<StoreMeta>, StoreError> {
        if !self.exists(META_FILE) {
            return Ok(None);
        }
        let path = self.file(META_FILE);
        let raw: serde_json::Value = self.read_json(META_FILE)?;
        let found = raw["schema_version"].as_u64().unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(StoreError::MigrationNeeded {
                path,
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let meta: StoreMeta = serde_json::from_value(raw).map_err(|e| StoreError::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if !meta.phases.is_monotone() {
            return Err(StoreError::Malformed {
                path,
                reason: "phase markers are not monotone".into(),
            });
        }
        Ok(Some(meta))
    }

    pub fn write_meta(&self, meta: &StoreMeta) -> Result<(), StoreError> {
        self.write_json(META_FILE, meta)
    }

    /// Persists a character's frame under `frames/` unless it already lives
    /// there.
    pub fn store_character(&self, r: &CharacterRecord) -> Result<StoredCharacter, StoreError> {
        let frames_dir = self.dir.join(FRAMES_DIR);
        let frame_path = match &r.representative_frame.image {
            ImageHandle::File { path } if path.parent() == Some(frames_dir.as_path()) => {
                let file = path.file_name().unwrap().to_string_lossy();
                format!("{FRAMES_DIR}/{file}")
            }
            image => {
                let (mime, bytes) = image.load().map_err(io_err(&frames_dir))?;
                let ext = match mime.as_str() {
                    "image/png" => "png",
                    "image/webp" => "webp",
                    _ => "jpg",
                };
                let rel = format!("{FRAMES_DIR}/{}.{ext}", r.name);
                self.write_atomic(&rel, &bytes)?;
                rel
            }
        };
        Ok(StoredCharacter {
            name: r.name.clone(),
            description: r.description.clone(),
            frame_path,
            frame_time: r.representative_frame.timestamp,
        })
    }

    pub fn resolve_character(&self, s: &StoredCharacter) -> CharacterRecord {
        CharacterRecord {
            name: s.name.clone(),
            description: s.description.clone(),
            representative_frame: FrameRef {
                video_id: self.video_id.clone(),
                timestamp: s.frame_time,
                image: ImageHandle::File {
                    path: self.dir.join(&s.frame_path),
                },
            },
        }
    }

    pub fn write_registry(&self, registry: &CharacterRegistry) -> Result<(), StoreError> {
        let records = registry
            .records
            .iter()
            .map(|r| self.store_character(r))
            .collect::<Result<Vec<_>, _>>()?;
        self.write_json(
            REGISTRY_FILE,
            &RegistryFile {
                records,
                rename_map: registry.rename_map.clone(),
            },
        )
    }

    pub fn read_registry(&self) -> Result<CharacterRegistry, StoreError> {
        let file: RegistryFile = self.read_json(REGISTRY_FILE)?;
        Ok(CharacterRegistry {
            records: file.records.iter().map(|s| self.resolve_character(s)).collect(),
            rename_map: file.rename_map,
        })
    }
}

// ---------------------------------------------------------------------------
// Whole-store save / load
// ---------------------------------------------------------------------------

pub fn save(store: &CaptionStore, root: &Path) -> Result<(), StoreError> {
    let dir = StoreDir::new(root, &store.video_id);
    dir.write_jsonl(SCENES_FILE, &store.scenes)?;
    dir.write_registry(&store.registry)?;
    dir.write_meta(&StoreMeta {
        schema_version: SCHEMA_VERSION,
        video_id: store.video_id.clone(),
        duration: store.duration,
        phases: store.phases,
    })
}

/// Loads whatever the store holds. Scenes and registry are empty until the
/// corresponding files exist; check `phases` to decide whether to resume.
pub fn load(video_id: &str, root: &Path) -> Result<CaptionStore, StoreError> {
    let dir = StoreDir::new(root, video_id);
    let meta = dir
        .read_meta()?
        .ok_or_else(|| StoreError::Missing(video_id.to_string()))?;
    if meta.video_id != video_id {
        return Err(StoreError::Mismatch {
            path: dir.path().to_path_buf(),
            reason: format!("meta names {}", meta.video_id),
        });
    }
    let scenes = if dir.exists(SCENES_FILE) {
        dir.read_jsonl(SCENES_FILE)?
    } else {
        Vec::new()
    };
    let registry = if dir.exists(REGISTRY_FILE) {
        dir.read_registry()?
    } else {
        CharacterRegistry::default()
    };
    Ok(CaptionStore {
        video_id: meta.video_id,
        duration: meta.duration,
        scenes,
        registry,
        phases: meta.phases,
    })
}

/// Files under a store directory that define its content, excluding the
/// call log and lock file. Paths are relative and sorted.
pub fn content_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(io_err(&d))? {
            let p = e.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            if name == LOCK_FILE || name.ends_with(CALLS_FILE) {
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
            let bytes = std::fs::read(&p).map_err(io_err(&p))?;
            out.push((rel, bytes));
        }
    }
    out.sort();
    Ok(out)
}
