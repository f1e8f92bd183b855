//! Renames character tokens in captions to their canonical names.

use super::{CaptionContext, CaptioningError, RewriteMode};
use crate::parallel::fan_out;
use crate::structured_io::{find_tokens, map_tokens, query_with_repair, CaptionReply, Reply};
use crate::types::{CharacterRegistry, Scene, StageTag};

pub(crate) fn unit_id(video_id: &str, idx: usize) -> String {
    format!("{video_id}/m{idx:04}")
}

/// Applies the rename map to a scene. Tokens outside the map are unwrapped
/// to plain text and names outside it are dropped from the appeared list;
/// both are reported as warnings.
pub fn rewrite_scene(scene: &Scene, registry: &CharacterRegistry) -> (Scene, Vec<String>) {
    let mut warnings = Vec::new();
    let mut rename = |text: &str| {
        map_tokens(text, |t| match registry.rename_map.get(t) {
            Some(new) => Some(format!("<{new}>")),
            None => {
                warnings.push(format!("unwrapped unregistered name <{t}>"));
                Some(t.to_string())
            }
        })
    };
    let brief = rename(&scene.brief);
    let detailed = rename(&scene.detailed);
    let mut appeared: Vec<String> = Vec::new();
    for n in &scene.appeared_characters {
        match registry.rename_map.get(n) {
            Some(new) if !appeared.contains(new) => appeared.push(new.clone()),
            Some(_) => {}
            None => warnings.push(format!("dropping unregistered appeared name {n}")),
        }
    }
    let out = Scene {
        brief,
        detailed,
        appeared_characters: appeared,
        ..scene.clone()
    };
    (out, warnings)
}

pub(crate) fn rewrite_phase(
    ctx: &CaptionContext,
    scenes: &[Scene],
    registry: &CharacterRegistry,
) -> Result<Vec<Scene>, CaptioningError> {
    fan_out(scenes, ctx.cfg.workers, |i, scene| {
        let (out, warnings) = rewrite_scene(scene, registry);
        let uid = unit_id(ctx.video_id(), i);
        ctx.diagnostics.warn_all(StageTag::CaptionModify, &uid, warnings);
        if ctx.cfg.rewrite_mode == RewriteMode::Model {
            check_with_model(ctx, &uid, scene, &out, registry)?;
        }
        Ok(out)
    })
    .into_iter()
    .collect()
}

/// Asks the model for the same rewrite and reports any disagreement. The
/// deterministic result is always the one kept.
fn check_with_model(
    ctx: &CaptionContext,
    uid: &str,
    scene: &Scene,
    expected: &Scene,
    registry: &CharacterRegistry,
) -> Result<(), CaptioningError> {
    let stage = StageTag::CaptionModify;
    let mut names = scene.appeared_characters.clone();
    for t in find_tokens(&scene.brief)
        .into_iter()
        .chain(find_tokens(&scene.detailed))
    {
        if !names.contains(&t) {
            names.push(t);
        }
    }
    let renames: Vec<String> = names
        .iter()
        .filter_map(|n| registry.rename_map.get(n).map(|new| format!("{n} -> {new}")))
        .collect();
    if renames.is_empty() {
        return Ok(());
    }
    let old = CaptionReply {
        brief: scene.brief.clone(),
        appeared: scene.appeared_characters.clone(),
        detailed: scene.detailed.clone(),
    };
    let req = ctx.request(
        stage,
        uid.to_string(),
        &[
            ("old_description", old.render().into()),
            ("rename_list", renames.join("\n").into()),
        ],
    )?;
    match query_with_repair(ctx.gateway, &req, CaptionReply::parse) {
        Ok(p) => {
            let r = p.value;
            let agrees = r.brief.trim() == expected.brief.trim()
                && r.detailed.trim() == expected.detailed.trim()
                && r.appeared == expected.appeared_characters;
            if !agrees {
                ctx.warn(
                    stage,
                    uid,
                    "model rewrite differs from token substitution; keeping substitution",
                );
            }
        }
        Err(e) => ctx.warn(stage, uid, format!("model rewrite failed; keeping substitution: {e}")),
    }
    Ok(())
}
