//! Map stage: turns a video into scene captions and a canonical character
//! registry.
//!
//! Work runs in four checkpointed phases. Each phase reads its inputs back
//! from the store directory, so a resumed run follows the same path as an
//! uninterrupted one.

mod associate;
mod characters;
mod describe;
mod rewrite;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use associate::{canonicalize, kind_of, Canonical, Component};
pub use characters::CharacterUnitRecords;
pub use rewrite::rewrite_scene;
pub use split::SceneDraft;

use crate::diagnostics::Diagnostics;
use crate::framing::{even_subsample, plan_caption_units, plan_character_units, FramingError, SamplingConfig};
use crate::gateway::Gateway;
use crate::store::{self, CaptionStore, Phase, StoreDir, StoreError, StoreMeta, SCHEMA_VERSION};
use crate::structured_io::{MergeTriple, Slot, TemplateError, Templates};
use crate::types::{FrameRef, ModelRequest, Part, Seconds, StageTag};
use crate::video::{FrameSource, VideoError};

pub const DRAFTS_FILE: &str = "drafts.jsonl";
pub const CHARACTERS_FILE: &str = "characters.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const MERGES_FILE: &str = "merges.jsonl";

#[derive(Debug, Error)]
pub enum CaptioningError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteMode {
    /// Token substitution over the rename map.
    #[default]
    Deterministic,
    /// Ask the model to rewrite; its output is kept only when it matches
    /// the deterministic result.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptioningConfig {
    /// Caption units per describe window. Windows run in parallel; scenes
    /// inside a window are captioned in order.
    pub describe_window: u32,
    pub rewrite_mode: RewriteMode,
    pub workers: usize,
}

impl Default for CaptioningConfig {
    fn default() -> Self {
        Self {
            describe_window: 8,
            rewrite_mode: RewriteMode::Deterministic,
            workers: 8,
        }
    }
}

/// Everything a captioning run borrows.
pub struct CaptionContext<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a Templates,
    pub video: &'a dyn FrameSource,
    pub sampling: &'a SamplingConfig,
    pub cfg: &'a CaptioningConfig,
    pub diagnostics: &'a Diagnostics,
}

impl CaptionContext<'_> {
    fn video_id(&self) -> &str {
        self.video.video_id()
    }

    fn request(&self, stage: StageTag, unit: String, slots: &[(&str, Slot)]) -> Result<ModelRequest, CaptioningError> {
        Ok(ModelRequest::new(stage, unit, self.templates.render(stage, slots)?))
    }

    fn warn(&self, stage: StageTag, unit: &str, message: impl Into<String>) {
        self.diagnostics.warn(stage, unit, message);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionOutcome {
    pub store: CaptionStore,
    /// Accepted character merge triples.
    pub merges: usize,
    /// Set when the run stopped early on request.
    pub stopped_after: Option<Phase>,
}

/// A merge triple accepted during association, tagged with its step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub step: u32,
    pub kept: String,
    pub incoming: String,
    pub better: String,
}

impl MergeRecord {
    pub fn triple(&self) -> MergeTriple {
        (self.kept.clone(), self.incoming.clone(), self.better.clone())
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Frames interleaved with "Frame i:" labels so replies can cite indices.
pub(crate) fn labeled_frames(frames: &[FrameRef]) -> Vec<Part> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(i, f)| [Part::text(format!("Frame {i}:")), Part::image(f.clone())])
        .collect()
}

pub(crate) fn image_parts(frames: &[FrameRef]) -> Vec<Part> {
    frames.iter().cloned().map(Part::image).collect()
}

/// Thins `times` evenly to at most `cap` entries.
pub(crate) fn capped(times: &[Seconds], cap: usize) -> Vec<Seconds> {
    even_subsample(times.len(), cap).into_iter().map(|i| times[i]).collect()
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Runs (or resumes) captioning for one video under `root`. With
/// `stop_after`, returns right after that phase is checkpointed.
pub fn run_captioning(
    ctx: &CaptionContext,
    root: &Path,
    stop_after: Option<Phase>,
) -> Result<CaptionOutcome, CaptioningError> {
    let dir = StoreDir::new(root, ctx.video_id());
    let _lock = dir.lock()?;
    let duration = ctx.video.duration();
    let mut meta = match dir.read_meta()? {
        Some(m) if m.video_id == ctx.video_id() && m.duration == duration => m,
        Some(m) => {
            return Err(StoreError::Mismatch {
                path: dir.path().to_path_buf(),
                reason: format!("stored duration {} differs from {duration}", m.duration),
            }
            .into())
        }
        None => {
            let m = StoreMeta {
                schema_version: SCHEMA_VERSION,
                video_id: ctx.video_id().to_string(),
                duration,
                phases: Default::default(),
            };
            dir.write_meta(&m)?;
            m
        }
    };

    let caption_units = plan_caption_units(duration, ctx.sampling)?;
    let character_units = plan_character_units(duration, ctx.sampling)?;

    for phase in Phase::ALL {
        if meta.phases.is_done(phase) {
            continue;
        }
        tracing::info!(video = ctx.video_id(), phase = phase.as_str(), "captioning phase");
        match phase {
            Phase::Split => {
                let drafts = split::split_phase(ctx, &caption_units)?;
                dir.write_jsonl(DRAFTS_FILE, &drafts)?;
            }
            Phase::Characters => {
                let records = characters::characters_phase(ctx, &dir, &character_units)?;
                dir.write_jsonl(CHARACTERS_FILE, &records)?;
            }
            Phase::Describe => {
                let drafts: Vec<SceneDraft> = dir.read_jsonl(DRAFTS_FILE)?;
                let chars = characters::load_characters(&dir, &character_units)?;
                let scenes = describe::describe_phase(ctx, &drafts, &caption_units, &chars)?;
                dir.write_jsonl(CAPTIONS_FILE, &scenes)?;
            }
            Phase::Reduce => {
                let chars = characters::load_characters(&dir, &character_units)?;
                let scenes = dir.read_jsonl(CAPTIONS_FILE)?;
                let assoc = associate::associate(ctx, &chars)?;
                let scenes = rewrite::rewrite_phase(ctx, &scenes, &assoc.registry)?;
                dir.write_jsonl(MERGES_FILE, &assoc.merges)?;
                dir.write_jsonl(store::SCENES_FILE, &scenes)?;
                dir.write_registry(&assoc.registry)?;
            }
        }
        meta.phases.mark(phase);
        dir.write_meta(&meta)?;
        if stop_after == Some(phase) && phase != Phase::Reduce {
            return Ok(CaptionOutcome {
                store: store::load(ctx.video_id(), root)?,
                merges: 0,
                stopped_after: Some(phase),
            });
        }
    }

    let merges: Vec<MergeRecord> = dir.read_jsonl(MERGES_FILE)?;
    Ok(CaptionOutcome {
        store: store::load(ctx.video_id(), root)?,
        merges: merges.len(),
        stopped_after: None,
    })
}
