//! Scene splitting within caption units and boundary merging across them.

use serde::{Deserialize, Serialize};

use super::{capped, image_parts, labeled_frames, CaptionContext, CaptioningError};
use crate::framing::CaptionUnit;
use crate::parallel::fan_out;
use crate::structured_io::replies::parse_merge_decision;
use crate::structured_io::{query_with_repair, Reply, SplitReply};
use crate::types::{round_tenth, FrameRef, Seconds, StageTag, TimeInterval};

/// A scene boundary decision before captioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDraft {
    pub interval: TimeInterval,
    pub first_unit: u32,
    pub last_unit: u32,
    /// Frames for this span could not be fetched while splitting.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

struct UnitSplit {
    drafts: Vec<TimeInterval>,
    merge_with_previous: bool,
    degraded: bool,
}

pub(crate) fn unit_id(video_id: &str, k: usize) -> String {
    format!("{video_id}/u{k:04}")
}

pub(crate) fn split_phase(ctx: &CaptionContext, units: &[CaptionUnit]) -> Result<Vec<SceneDraft>, CaptioningError> {
    let splits = fan_out(units, ctx.cfg.workers, |k, _| split_unit(ctx, units, k))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(snap(assemble(units, &splits), ctx.video.duration()))
}

/// Concatenates per-unit drafts, folding each unit's first draft into the
/// previous one when the boundary was judged continuous.
fn assemble(units: &[CaptionUnit], splits: &[UnitSplit]) -> Vec<SceneDraft> {
    let mut out: Vec<SceneDraft> = Vec::new();
    for (unit, s) in units.iter().zip(splits) {
        for (i, iv) in s.drafts.iter().enumerate() {
            match out.last_mut() {
                Some(prev) if i == 0 && s.merge_with_previous => {
                    prev.interval = prev.interval.hull(iv);
                    prev.last_unit = unit.unit_id;
                    prev.degraded |= s.degraded;
                }
                _ => out.push(SceneDraft {
                    interval: *iv,
                    first_unit: unit.unit_id,
                    last_unit: unit.unit_id,
                    degraded: s.degraded,
                }),
            }
        }
    }
    out
}

/// Snaps boundaries to the 0.1 s resolution of the scenes file so stored
/// and in-memory scenes agree. Drafts that vanish are folded into a
/// neighbour and the last end never passes the video.
fn snap(drafts: Vec<SceneDraft>, duration: Seconds) -> Vec<SceneDraft> {
    let limit = (duration * 10.0).floor() / 10.0;
    let mut out: Vec<SceneDraft> = Vec::new();
    let mut carry: Option<SceneDraft> = None;
    for d in &drafts {
        let start = round_tenth(d.interval.start()).min(limit);
        let end = round_tenth(d.interval.end()).min(limit);
        match (TimeInterval::new(start, end), out.last_mut()) {
            (Ok(interval), _) => {
                let (first_unit, degraded) = match carry.take() {
                    Some(c) => (c.first_unit, c.degraded || d.degraded),
                    None => (d.first_unit, d.degraded),
                };
                out.push(SceneDraft {
                    interval,
                    first_unit,
                    last_unit: d.last_unit,
                    degraded,
                });
            }
            (Err(_), Some(prev)) => {
                prev.last_unit = d.last_unit;
                prev.degraded |= d.degraded;
            }
            (Err(_), None) => carry = Some(carry.unwrap_or_else(|| d.clone())),
        }
    }
    // Only a video shorter than the resolution loses every draft.
    if out.is_empty() {
        drafts
    } else {
        out
    }
}

fn split_unit(ctx: &CaptionContext, units: &[CaptionUnit], k: usize) -> Result<UnitSplit, CaptioningError> {
    let unit = &units[k];
    let uid = unit_id(ctx.video_id(), k);
    let times = capped(&unit.frame_times, ctx.sampling.frame_cap);
    let frames = match ctx.video.frames(&times) {
        Ok(f) => f,
        Err(e) => {
            ctx.warn(StageTag::SceneSplit, &uid, format!("frames unavailable: {e}"));
            return Ok(UnitSplit {
                drafts: vec![unit.interval],
                merge_with_previous: false,
                degraded: true,
            });
        }
    };
    let cuts = split_scenes(ctx, &uid, &frames)?;
    let drafts = cut(&unit.interval, &cuts);
    let merge_with_previous = match k {
        0 => false,
        _ => merge_boundary(ctx, &uid, &units[k - 1], unit, &drafts[0])?,
    };
    Ok(UnitSplit {
        drafts,
        merge_with_previous,
        degraded: false,
    })
}

/// Start times of new scenes inside the unit, excluding its start.
fn split_scenes(ctx: &CaptionContext, uid: &str, frames: &[FrameRef]) -> Result<Vec<Seconds>, CaptioningError> {
    let stage = StageTag::SceneSplit;
    let req = ctx.request(stage, uid.to_string(), &[("frames", labeled_frames(frames).into())])?;
    let reply = match query_with_repair(ctx.gateway, &req, SplitReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, uid, p.warnings);
            p.value
        }
        Err(e) => {
            ctx.warn(stage, uid, format!("treating unit as one scene: {e}"));
            return Ok(Vec::new());
        }
    };
    if reply.single {
        return Ok(Vec::new());
    }
    let mut idx = reply.frames;
    idx.sort_unstable();
    idx.dedup();
    let mut cuts = Vec::new();
    for i in idx {
        if i <= 0 || i as usize >= frames.len() {
            ctx.warn(stage, uid, format!("ignoring boundary frame index {i}"));
            continue;
        }
        cuts.push(frames[i as usize].timestamp);
    }
    Ok(cuts)
}

/// Splits `iv` at the given interior times.
fn cut(iv: &TimeInterval, cuts: &[Seconds]) -> Vec<TimeInterval> {
    let mut bounds = vec![iv.start()];
    bounds.extend(cuts.iter().copied().filter(|t| *t > iv.start() && *t < iv.end()));
    bounds.push(iv.end());
    bounds
        .windows(2)
        .filter_map(|w| TimeInterval::new(w[0], w[1]).ok())
        .collect()
}

/// Asks whether the first draft of `unit` continues the last frame of the
/// previous unit. Any failure counts as a boundary.
fn merge_boundary(
    ctx: &CaptionContext,
    uid: &str,
    prev: &CaptionUnit,
    unit: &CaptionUnit,
    first: &TimeInterval,
) -> Result<bool, CaptioningError> {
    let stage = StageTag::SceneMerge;
    let mut times = vec![prev.last_frame_time()];
    let own = unit.times_within(first);
    times.extend(capped(&own, ctx.sampling.frame_cap.saturating_sub(1).max(1)));
    let frames = match ctx.video.frames(&times) {
        Ok(f) => f,
        Err(e) => {
            ctx.warn(stage, uid, format!("frames unavailable, keeping boundary: {e}"));
            return Ok(false);
        }
    };
    let req = ctx.request(stage, uid.to_string(), &[("frames", image_parts(&frames).into())])?;
    match query_with_repair(ctx.gateway, &req, parse_merge_decision) {
        Ok(p) => Ok(p.value),
        Err(e) => {
            ctx.warn(stage, uid, format!("keeping boundary: {e}"));
            Ok(false)
        }
    }
}
