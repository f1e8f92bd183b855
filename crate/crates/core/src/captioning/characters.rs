//! Character extraction over the sparse character units.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{capped, labeled_frames, CaptionContext, CaptioningError, CHARACTERS_FILE};
use crate::framing::CharacterUnit;
use crate::parallel::fan_out;
use crate::store::{StoreDir, StoredCharacter};
use crate::structured_io::{normalize_name, query_with_repair, CharacterReply, Reply};
use crate::types::{CharacterRecord, StageTag, TimeInterval};

/// One line of the characters checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterUnitRecords {
    pub unit: u32,
    pub records: Vec<StoredCharacter>,
}

/// A unit's span with its extracted characters, frames resolved.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct UnitCharacters {
    pub interval: TimeInterval,
    pub records: Vec<CharacterRecord>,
}

pub(crate) fn unit_id(video_id: &str, k: usize) -> String {
    format!("{video_id}/c{k:03}")
}

/// Names extracted from unit `k` carry this prefix so they stay unique
/// until association.
pub(crate) fn local_name(k: usize, name: &str) -> String {
    format!("c{k}_{name}")
}

pub(crate) fn characters_phase(
    ctx: &CaptionContext,
    dir: &StoreDir,
    units: &[CharacterUnit],
) -> Result<Vec<CharacterUnitRecords>, CaptioningError> {
    fan_out(units, ctx.cfg.workers, |k, unit| extract(ctx, dir, k, unit))
        .into_iter()
        .collect()
}

fn extract(
    ctx: &CaptionContext,
    dir: &StoreDir,
    k: usize,
    unit: &CharacterUnit,
) -> Result<CharacterUnitRecords, CaptioningError> {
    let stage = StageTag::CharacterSelect;
    let uid = unit_id(ctx.video_id(), k);
    let empty = CharacterUnitRecords {
        unit: unit.unit_id,
        records: Vec::new(),
    };
    let times = capped(&unit.frame_times, ctx.sampling.frame_cap);
    let frames = match ctx.video.frames(&times) {
        Ok(f) => f,
        Err(e) => {
            ctx.warn(stage, &uid, format!("frames unavailable: {e}"));
            return Ok(empty);
        }
    };
    let req = ctx.request(stage, uid.clone(), &[("frames", labeled_frames(&frames).into())])?;
    let reply = match query_with_repair(ctx.gateway, &req, CharacterReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            p.value
        }
        Err(e) => {
            ctx.warn(stage, &uid, format!("no characters extracted: {e}"));
            return Ok(empty);
        }
    };

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for d in reply.details {
        let Some(name) = normalize_name(&d.name) else {
            ctx.warn(
                stage,
                &uid,
                format!("dropping character with unusable name {:?}", d.name),
            );
            continue;
        };
        if !seen.insert(name.clone()) {
            ctx.warn(stage, &uid, format!("dropping duplicate character {name}"));
            continue;
        }
        let last = frames.len() as i64 - 1;
        let idx = d.frame.clamp(0, last);
        if idx != d.frame {
            ctx.warn(
                stage,
                &uid,
                format!("frame index {} clamped to {idx} for {name}", d.frame),
            );
        }
        let record = CharacterRecord {
            name: local_name(k, &name),
            description: d.description,
            representative_frame: frames[idx as usize].clone(),
        };
        records.push(dir.store_character(&record)?);
    }
    Ok(CharacterUnitRecords {
        unit: unit.unit_id,
        records,
    })
}

/// Reads the characters checkpoint, one entry per character unit.
pub(crate) fn load_characters(dir: &StoreDir, units: &[CharacterUnit]) -> Result<Vec<UnitCharacters>, CaptioningError> {
    let lines: Vec<CharacterUnitRecords> = dir.read_jsonl(CHARACTERS_FILE)?;
    Ok(units
        .iter()
        .map(|u| UnitCharacters {
            interval: u.interval,
            records: lines
                .iter()
                .filter(|l| l.unit == u.unit_id)
                .flat_map(|l| l.records.iter().map(|s| dir.resolve_character(s)))
                .collect(),
        })
        .collect())
}
