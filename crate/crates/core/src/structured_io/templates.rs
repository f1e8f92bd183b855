//! Prompt templates shipped as text assets, one per stage:
//! `templates/<stage>.v1.txt`. Placeholders are `{{name}}`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::types::{Part, StageTag};

pub const TEMPLATE_VERSION: &str = "v1";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{\s*([a-z_]+)\s*\}\}").unwrap());

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template} has unbound placeholder {{{{{slot}}}}}")]
    Unbound { template: StageTag, slot: String },
    #[error("reading template override {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Value bound to a placeholder.
#[derive(Debug, Clone)]
pub enum Slot {
    Text(String),
    /// Interleaved text and images, inserted in place.
    Parts(Vec<Part>),
}

impl From<String> for Slot {
    fn from(s: String) -> Self {
        Slot::Text(s)
    }
}

impl From<&str> for Slot {
    fn from(s: &str) -> Self {
        Slot::Text(s.to_string())
    }
}

impl From<Vec<Part>> for Slot {
    fn from(p: Vec<Part>) -> Self {
        Slot::Parts(p)
    }
}

pub fn template_file_name(id: StageTag) -> String {
    format!("{}.{TEMPLATE_VERSION}.txt", id.as_str())
}

fn builtin_text(id: StageTag) -> &'static str {
    match id {
        StageTag::SceneSplit => include_str!("../../templates/scene_split.v1.txt"),
        StageTag::SceneMerge => include_str!("../../templates/scene_merge.v1.txt"),
        StageTag::CharacterSelect => include_str!("../../templates/character_select.v1.txt"),
        StageTag::DenseCaption => include_str!("../../templates/dense_caption.v1.txt"),
        StageTag::CharacterMerge => include_str!("../../templates/character_merge.v1.txt"),
        StageTag::CaptionModify => include_str!("../../templates/caption_modify.v1.txt"),
        StageTag::SegmentIntention => include_str!("../../templates/segment_intention.v1.txt"),
        StageTag::GlobalIntention => include_str!("../../templates/global_intention.v1.txt"),
        StageTag::GoalProposal => include_str!("../../templates/goal_proposal.v1.txt"),
        StageTag::LocalPerception => include_str!("../../templates/local_perception.v1.txt"),
        StageTag::GlobalPerception => include_str!("../../templates/global_perception.v1.txt"),
        StageTag::Answer => include_str!("../../templates/answer.v1.txt"),
        StageTag::Baseline => include_str!("../../templates/baseline.v1.txt"),
    }
}

#[derive(Debug, Clone)]
pub struct Templates {
    texts: BTreeMap<StageTag, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            texts: StageTag::ALL
                .iter()
                .map(|id| (*id, builtin_text(*id).to_string()))
                .collect(),
        }
    }

    /// Built-in templates, replaced by any `<stage>.v1.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::builtin();
        for id in StageTag::ALL {
            let path = dir.join(template_file_name(id));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                t.texts.insert(id, text);
            }
        }
        Ok(t)
    }

    pub fn text(&self, id: StageTag) -> &str {
        &self.texts[&id]
    }

    pub fn placeholders(&self, id: StageTag) -> Vec<String> {
        PLACEHOLDER
            .captures_iter(self.text(id))
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Substitutes every placeholder; text runs are merged into single text
    /// parts around inserted images.
    pub fn render(&self, id: StageTag, slots: &[(&str, Slot)]) -> Result<Vec<Part>, TemplateError> {
        let text = self.text(id);
        let mut parts = Vec::new();
        let mut buf = String::new();
        let mut last = 0;
        for cap in PLACEHOLDER.captures_iter(text) {
            let m = cap.get(0).unwrap();
            buf.push_str(&text[last..m.start()]);
            last = m.end();
            let name = &cap[1];
            let slot =
                slots
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, s)| s)
                    .ok_or_else(|| TemplateError::Unbound {
                        template: id,
                        slot: name.to_string(),
                    })?;
            match slot {
                Slot::Text(s) => buf.push_str(s),
                Slot::Parts(ps) => {
                    for p in ps {
                        match p {
                            Part::Text { text } => buf.push_str(text),
                            Part::Image { .. } => {
                                flush(&mut buf, &mut parts);
                                parts.push(p.clone());
                            }
                        }
                    }
                }
            }
        }
        buf.push_str(&text[last..]);
        flush(&mut buf, &mut parts);
        Ok(parts)
    }
}

fn flush(buf: &mut String, parts: &mut Vec<Part>) {
    if !buf.trim().is_empty() {
        parts.push(Part::text(buf.trim().to_string()));
    }
    buf.clear();
}
