//! Chunk-level relevance analysis and its reduction to one video-level
//! judgement.

use super::{question_unit, AnalysisContext, AnalysisError};
use crate::framing::even_subsample;
use crate::parallel::fan_out;
use crate::store::CaptionStore;
use crate::structured_io::{query_with_repair, GlobalReply, Reply, SegmentReply, Slot};
use crate::types::{
    merge_intervals, Confidence, FrameRef, GlobalAnalysis, KeyCharacter, Part, Question, QuestionScope, Scene,
    SegmentAnalysis, StageTag, TimeInterval,
};

const NOT_PROVIDED: &str = "Not provided.";

pub fn chunk_scenes(scenes: &[Scene], per_chunk: usize) -> Vec<&[Scene]> {
    scenes.chunks(per_chunk.max(1)).collect()
}

fn span(scenes: &[Scene]) -> TimeInterval {
    scenes[0].interval.hull(&scenes[scenes.len() - 1].interval)
}

/// Widens `iv` to cover at least `min_scenes` scenes by adding neighbours on
/// both sides, then clips it to `clip`. Intervals touching no scene are
/// dropped.
pub fn pad_interval(
    iv: &TimeInterval,
    scenes: &[Scene],
    clip: &TimeInterval,
    min_scenes: usize,
) -> Option<TimeInterval> {
    let hits: Vec<usize> = scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| s.interval.overlaps(iv))
        .map(|(i, _)| i)
        .collect();
    let (mut lo, mut hi) = (*hits.first()?, *hits.last()?);
    while hi - lo + 1 < min_scenes && (lo > 0 || hi + 1 < scenes.len()) {
        lo = lo.saturating_sub(1);
        if hi - lo + 1 < min_scenes && hi + 1 < scenes.len() {
            hi += 1;
        }
    }
    let widened = if hits.len() < min_scenes {
        iv.hull(&scenes[lo].interval).hull(&scenes[hi].interval)
    } else {
        *iv
    };
    widened.intersect(clip)
}

pub(crate) fn timed_frames(frames: &[FrameRef]) -> Vec<Part> {
    frames
        .iter()
        .flat_map(|f| [Part::text(format!("[{:.1}s]", f.timestamp)), Part::image(f.clone())])
        .collect()
}

// ---------------------------------------------------------------------------
// Map
// ---------------------------------------------------------------------------

pub(crate) fn map_segments(
    ctx: &AnalysisContext,
    store: &CaptionStore,
    q: &Question,
) -> Result<Vec<SegmentAnalysis>, AnalysisError> {
    let chunks = chunk_scenes(&store.scenes, ctx.sampling.chunk_scenes);
    let with_frames = ctx.cfg.frames_in_intention(store.duration);
    fan_out(&chunks, ctx.cfg.workers, |k, chunk| {
        analyze_chunk(ctx, store, q, k, chunk, with_frames)
    })
    .into_iter()
    .collect()
}

fn analyze_chunk(
    ctx: &AnalysisContext,
    store: &CaptionStore,
    q: &Question,
    k: usize,
    chunk: &[Scene],
    with_frames: bool,
) -> Result<SegmentAnalysis, AnalysisError> {
    let stage = StageTag::SegmentIntention;
    let uid = format!("{}/c{k:04}", question_unit(q));
    let frames = if with_frames {
        let mids: Vec<f64> = chunk.iter().map(|s| s.interval.midpoint()).collect();
        let times: Vec<f64> = even_subsample(mids.len(), ctx.sampling.frame_cap)
            .into_iter()
            .map(|i| mids[i])
            .collect();
        match ctx.video.frames(&times) {
            Ok(f) => Slot::from(timed_frames(&f)),
            Err(e) => {
                ctx.warn(stage, &uid, format!("frames unavailable: {e}"));
                Slot::from(NOT_PROVIDED)
            }
        }
    } else {
        Slot::from(NOT_PROVIDED)
    };
    let captions: Vec<String> = chunk.iter().map(Scene::caption_line).collect();
    let req = ctx.request(
        stage,
        uid.clone(),
        &[
            ("question", q.render().into()),
            ("frames", frames),
            ("captions", captions.join("\n").into()),
        ],
    )?;
    let mut out = SegmentAnalysis {
        chunk_id: k as u32,
        reasoning: String::new(),
        relevant: Vec::new(),
        confidence: Confidence::MIN,
        key_characters: Vec::new(),
    };
    match query_with_repair(ctx.gateway, &req, SegmentReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            let r = p.value;
            let clip = span(chunk);
            let mut padded = Vec::new();
            for iv in &r.relevant {
                match pad_interval(iv, &store.scenes, &clip, ctx.cfg.pad_min_scenes) {
                    Some(p) => padded.push(p),
                    None => ctx.warn(stage, &uid, format!("dropping interval {iv} outside this part")),
                }
            }
            out.reasoning = r.reasoning;
            out.relevant = merge_intervals(&padded);
            out.confidence = r.confidence;
            out.key_characters = r.key_characters;
        }
        Err(e) => ctx.warn(stage, &uid, format!("no analysis for this part: {e}")),
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reduce
// ---------------------------------------------------------------------------

/// Union of the intervals from the most confident analyses that found any.
fn most_confident(segments: &[SegmentAnalysis]) -> Vec<TimeInterval> {
    let Some(best) = segments
        .iter()
        .filter(|s| !s.relevant.is_empty())
        .map(|s| s.confidence)
        .max()
    else {
        return Vec::new();
    };
    let ivs: Vec<TimeInterval> = segments
        .iter()
        .filter(|s| s.confidence == best)
        .flat_map(|s| s.relevant.iter().copied())
        .collect();
    merge_intervals(&ivs)
}

/// Clips and unions the reduced intervals, falls back to the most
/// confident chunk intervals and then to the whole video when empty, and
/// keeps at most `max` intervals (ranked by the confidence of the chunk
/// analyses they overlap) unless `whole_video`.
pub fn reduce_relevant(
    intervals: &[TimeInterval],
    segments: &[SegmentAnalysis],
    duration: f64,
    whole_video: bool,
    max: usize,
) -> Vec<TimeInterval> {
    let video = TimeInterval::new(0.0, duration).expect("store duration is positive");
    let clipped: Vec<TimeInterval> = intervals.iter().filter_map(|iv| iv.intersect(&video)).collect();
    let mut out = merge_intervals(&clipped);
    if out.is_empty() {
        out = most_confident(segments);
    }
    if out.is_empty() {
        return vec![video];
    }
    if !whole_video && out.len() > max {
        let score = |iv: &TimeInterval| {
            segments
                .iter()
                .filter(|s| s.relevant.iter().any(|r| r.overlaps(iv)))
                .map(|s| s.confidence.get())
                .max()
                .unwrap_or(0)
        };
        let mut ranked: Vec<(u8, TimeInterval)> = out.iter().map(|iv| (score(iv), *iv)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.start().total_cmp(&b.1.start())));
        ranked.truncate(max);
        out = ranked.into_iter().map(|(_, iv)| iv).collect();
        out.sort_by(|a, b| a.start().total_cmp(&b.start()));
    }
    out
}

fn render_segments(segments: &[SegmentAnalysis], scenes: &[Scene], per_chunk: usize) -> String {
    let chunks = chunk_scenes(scenes, per_chunk);
    segments
        .iter()
        .map(|s| {
            let reply = SegmentReply {
                reasoning: s.reasoning.clone(),
                relevant: s.relevant.clone(),
                confidence: s.confidence,
                key_characters: s.key_characters.clone(),
            };
            let part = chunks
                .get(s.chunk_id as usize)
                .map(|c| span(c).to_string())
                .unwrap_or_default();
            format!("Part {} {part}:\n{}", s.chunk_id + 1, reply.render())
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn reduce_segments(
    ctx: &AnalysisContext,
    store: &CaptionStore,
    q: &Question,
    segments: &[SegmentAnalysis],
) -> Result<GlobalAnalysis, AnalysisError> {
    let stage = StageTag::GlobalIntention;
    let uid = question_unit(q);
    let whole_video = ctx.cfg.is_whole_video(q.category.as_deref());
    let req = ctx.request(
        stage,
        uid.clone(),
        &[
            ("question", q.render().into()),
            (
                "analyses",
                render_segments(segments, &store.scenes, ctx.sampling.chunk_scenes).into(),
            ),
        ],
    )?;
    let reduce =
        |ivs: &[TimeInterval]| reduce_relevant(ivs, segments, store.duration, whole_video, ctx.cfg.max_relevant);
    match query_with_repair(ctx.gateway, &req, GlobalReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            let r = p.value;
            if r.relevant.is_empty() {
                ctx.warn(stage, &uid, "no relevant segments; falling back to chunk analyses");
            }
            Ok(GlobalAnalysis {
                reasoning: r.reasoning,
                relevant: reduce(&r.relevant),
                key_characters: r.key_characters,
                scope: r.scope,
            })
        }
        Err(e) => {
            ctx.warn(stage, &uid, format!("using the most confident chunk analyses: {e}"));
            let mut key_characters: Vec<KeyCharacter> = Vec::new();
            for k in segments.iter().flat_map(|s| &s.key_characters) {
                if !key_characters.contains(k) {
                    key_characters.push(k.clone());
                }
            }
            Ok(GlobalAnalysis {
                reasoning: String::new(),
                relevant: reduce(&[]),
                key_characters,
                scope: QuestionScope::Local,
            })
        }
    }
}
