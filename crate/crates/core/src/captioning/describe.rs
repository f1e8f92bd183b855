//! Dense captioning of each scene draft with the characters in view.

use std::collections::BTreeSet;

use super::characters::UnitCharacters;
use super::split::SceneDraft;
use super::{capped, image_parts, CaptionContext, CaptioningError};
use crate::framing::CaptionUnit;
use crate::parallel::fan_out;
use crate::structured_io::{
    find_tokens, map_tokens, normalize_name, query_with_repair, CaptionReply, QueryFailure, Reply, Slot,
};
use crate::types::{CharacterRecord, Part, Scene, Seconds, StageTag};

const NONE: &str = "None.";

pub(crate) fn unit_id(video_id: &str, idx: usize) -> String {
    format!("{video_id}/s{idx:04}")
}

pub(crate) fn describe_phase(
    ctx: &CaptionContext,
    drafts: &[SceneDraft],
    units: &[CaptionUnit],
    chars: &[UnitCharacters],
) -> Result<Vec<Scene>, CaptioningError> {
    let window = ctx.cfg.describe_window.max(1);
    let mut windows: Vec<Vec<usize>> = Vec::new();
    let mut current = None;
    for (i, d) in drafts.iter().enumerate() {
        let w = d.first_unit / window;
        if current != Some(w) {
            windows.push(Vec::new());
            current = Some(w);
        }
        windows.last_mut().unwrap().push(i);
    }
    let per_window = fan_out(&windows, ctx.cfg.workers, |_, idx| {
        let mut previous = NONE.to_string();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            let scene = describe_scene(ctx, i, &drafts[i], &previous, units, chars)?;
            if !scene.detailed.is_empty() {
                previous = scene.detailed.clone();
            }
            out.push(scene);
        }
        Ok::<_, CaptioningError>(out)
    });
    let mut scenes = Vec::with_capacity(drafts.len());
    for w in per_window {
        scenes.extend(w?);
    }
    Ok(scenes)
}

/// Frames of the caption units covering the draft, inside its span.
fn scene_times(draft: &SceneDraft, units: &[CaptionUnit]) -> Vec<Seconds> {
    let times: Vec<Seconds> = units
        .iter()
        .filter(|u| u.unit_id >= draft.first_unit && u.unit_id <= draft.last_unit)
        .flat_map(|u| u.times_within(&draft.interval))
        .collect();
    if times.is_empty() {
        vec![draft.interval.midpoint()]
    } else {
        times
    }
}

/// How many character reference images fit beside the scene frames. Scene
/// frames keep at least half the cap when there are enough of them.
pub(crate) fn character_slots(characters: usize, scene_frames: usize, cap: usize) -> usize {
    characters.min(cap - scene_frames.min(cap / 2))
}

fn memory_slot(chars: &[&CharacterRecord], with_image: usize) -> Slot {
    if chars.is_empty() {
        return Slot::from(NONE);
    }
    let mut parts = Vec::new();
    for (i, c) in chars.iter().enumerate() {
        parts.push(Part::text(format!(
            "[NAME: {}] [DESCRIPTION: {}]",
            c.name, c.description
        )));
        if i < with_image {
            parts.push(Part::image(c.representative_frame.clone()));
        }
    }
    Slot::from(parts)
}

fn describe_scene(
    ctx: &CaptionContext,
    idx: usize,
    draft: &SceneDraft,
    previous: &str,
    units: &[CaptionUnit],
    chars: &[UnitCharacters],
) -> Result<Scene, CaptioningError> {
    let stage = StageTag::DenseCaption;
    let uid = unit_id(ctx.video_id(), idx);
    let mut scene = Scene {
        scene_id: idx as u32,
        interval: draft.interval,
        brief: String::new(),
        detailed: String::new(),
        appeared_characters: Vec::new(),
        degraded: true,
    };

    let in_view: Vec<&CharacterRecord> = chars
        .iter()
        .filter(|u| u.interval.overlaps(&draft.interval))
        .flat_map(|u| u.records.iter())
        .collect();
    let memory: BTreeSet<&str> = in_view.iter().map(|c| c.name.as_str()).collect();

    let cap = ctx.sampling.frame_cap;
    let times = scene_times(draft, units);
    let slots = character_slots(in_view.len(), times.len(), cap);
    let times = capped(&times, cap - slots);
    let frames = match ctx.video.frames(&times) {
        Ok(f) => f,
        Err(e) => {
            ctx.warn(stage, &uid, format!("frames unavailable: {e}"));
            return Ok(scene);
        }
    };

    let req = ctx.request(
        stage,
        uid.clone(),
        &[
            ("memory", memory_slot(&in_view, slots)),
            ("previous_caption", previous.into()),
            ("frames", image_parts(&frames).into()),
        ],
    )?;
    let mut unknown = BTreeSet::new();
    let mut keep_known = |text: &str| {
        map_tokens(text, |t| {
            if memory.contains(t) {
                None
            } else {
                unknown.insert(t.to_string());
                Some(t.to_string())
            }
        })
    };
    match query_with_repair(ctx.gateway, &req, CaptionReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            let reply = p.value;
            scene.brief = keep_known(&reply.brief);
            scene.detailed = keep_known(&reply.detailed);
            let listed = reply.appeared.iter().filter_map(|n| {
                let n = normalize_name(n);
                if n.as_deref().is_some_and(|n| !memory.contains(n)) {
                    ctx.warn(stage, &uid, format!("appeared name {n:?} is not in memory"));
                }
                n
            });
            scene.appeared_characters = appeared(listed, &scene.detailed, &memory);
            scene.degraded = false;
        }
        Err(QueryFailure::Malformed { raw, error, .. }) => {
            ctx.warn(stage, &uid, format!("keeping raw caption text: {error}"));
            scene.detailed = keep_known(raw.trim());
            scene.appeared_characters = appeared(std::iter::empty(), &scene.detailed, &memory);
        }
        Err(e) => {
            ctx.warn(stage, &uid, format!("scene left uncaptioned: {e}"));
        }
    }
    for t in unknown {
        ctx.warn(stage, &uid, format!("unwrapped unknown name <{t}>"));
    }
    Ok(scene)
}

/// Listed names first, then names tagged in the text, restricted to the
/// memory and deduplicated.
fn appeared(listed: impl Iterator<Item = String>, detailed: &str, memory: &BTreeSet<&str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in listed.chain(find_tokens(detailed)) {
        if memory.contains(n.as_str()) && !out.contains(&n) {
            out.push(n);
        }
    }
    out
}
