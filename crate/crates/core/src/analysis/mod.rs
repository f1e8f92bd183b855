//! Reduce stage: answers a multiple-choice question over a caption store.
//!
//! Chunk analyses run in parallel, are reduced to one video-level
//! judgement, which drives goal questions, targeted visual perception and
//! the final answer.

mod intention;
mod perception;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use intention::{chunk_scenes, pad_interval, reduce_relevant};

use crate::diagnostics::Diagnostics;
use crate::framing::SamplingConfig;
use crate::gateway::Gateway;
use crate::store::CaptionStore;
use crate::structured_io::{Slot, TemplateError, Templates};
use crate::types::{
    FinalAnswer, GlobalAnalysis, GoalProposal, ModelRequest, PerceptionResult, Question, SegmentAnalysis, StageTag,
};
use crate::video::FrameSource;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("caption store for {0} has no scenes")]
    EmptyStore(String),
    #[error("question {question} targets video {asked} but the store holds {held}")]
    WrongVideo {
        question: String,
        asked: String,
        held: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramesInIntention {
    /// On for videos shorter than `frames_off_after_s`.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalPerceptionMode {
    /// Run when the question is global or spans several intervals.
    #[default]
    Auto,
    Always,
    /// Run unless the question is judged local.
    SkipOnLocal,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub frames_in_intention: FramesInIntention,
    pub frames_off_after_s: f64,
    /// Relevant intervals touching fewer scenes than this are widened.
    pub pad_min_scenes: usize,
    pub max_relevant: usize,
    /// Categories exempt from the relevant-interval cap.
    pub whole_video_categories: Vec<String>,
    pub global_perception: GlobalPerceptionMode,
    pub captions_in_global: bool,
    pub workers: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frames_in_intention: FramesInIntention::Auto,
            frames_off_after_s: 1800.0,
            pad_min_scenes: 3,
            max_relevant: 10,
            whole_video_categories: vec!["SUM".into()],
            global_perception: GlobalPerceptionMode::Auto,
            captions_in_global: true,
            workers: 8,
        }
    }
}

impl AnalysisConfig {
    pub fn frames_in_intention(&self, duration: f64) -> bool {
        match self.frames_in_intention {
            FramesInIntention::On => true,
            FramesInIntention::Off => false,
            FramesInIntention::Auto => duration < self.frames_off_after_s,
        }
    }

    pub fn is_whole_video(&self, category: Option<&str>) -> bool {
        category.is_some_and(|c| self.whole_video_categories.iter().any(|w| w.eq_ignore_ascii_case(c)))
    }
}

/// Everything an analysis run borrows.
pub struct AnalysisContext<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a Templates,
    pub video: &'a dyn FrameSource,
    pub sampling: &'a SamplingConfig,
    pub cfg: &'a AnalysisConfig,
    pub diagnostics: &'a Diagnostics,
}

impl AnalysisContext<'_> {
    fn request(&self, stage: StageTag, unit: String, slots: &[(&str, Slot)]) -> Result<ModelRequest, AnalysisError> {
        Ok(ModelRequest::new(stage, unit, self.templates.render(stage, slots)?))
    }

    fn warn(&self, stage: StageTag, unit: &str, message: impl Into<String>) {
        self.diagnostics.warn(stage, unit, message);
    }
}

/// Every intermediate result of answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub question_id: String,
    pub video_id: String,
    pub segments: Vec<SegmentAnalysis>,
    pub global: GlobalAnalysis,
    pub goals: GoalProposal,
    pub perception: Vec<PerceptionResult>,
    pub answer: FinalAnswer,
}

pub(crate) fn question_unit(q: &Question) -> String {
    format!("{}/{}", q.video_id, q.question_id)
}

pub fn answer_question(
    ctx: &AnalysisContext,
    store: &CaptionStore,
    q: &Question,
) -> Result<AnswerTrace, AnalysisError> {
    if store.video_id != q.video_id {
        return Err(AnalysisError::WrongVideo {
            question: q.question_id.clone(),
            asked: q.video_id.clone(),
            held: store.video_id.clone(),
        });
    }
    if store.scenes.is_empty() {
        return Err(AnalysisError::EmptyStore(store.video_id.clone()));
    }
    let segments = intention::map_segments(ctx, store, q)?;
    let global = intention::reduce_segments(ctx, store, q, &segments)?;
    let goals = perception::propose_goals(ctx, q, &global)?;
    let perception = perception::perceive(ctx, store, q, &global, &goals)?;
    let answer = perception::final_answer(ctx, q, &global, &goals, &perception)?;
    Ok(AnswerTrace {
        question_id: q.question_id.clone(),
        video_id: q.video_id.clone(),
        segments,
        global,
        goals,
        perception,
        answer,
    })
}
