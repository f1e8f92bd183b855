//! Typed replies for each response grammar. `render` produces text in the
//! grammar; `parse` reads it back.

use std::sync::LazyLock;

use regex::Regex;

use super::lists::{
    normalize_name, parse_answer_letter, parse_confidence, parse_frame_list, parse_interval_list, parse_key_characters,
    parse_merge_tuples, parse_name_list, parse_scope, parse_yes_no, MergeTriple,
};
use super::sections::{clean_body, parse_sections, SectionMap};
use super::{ParseError, Parsed};
use crate::types::{AnswerLetter, Confidence, KeyCharacter, QuestionScope, StageTag, TimeInterval};

pub trait Reply: Sized {
    /// Output-format reminder appended on repair.
    const FORMAT: &'static str;
    fn render(&self) -> String;
    fn parse(text: &str) -> Result<Parsed<Self>, ParseError>;
}

fn required<'a>(m: &'a SectionMap, k: u32, kw: &str) -> Result<&'a str, ParseError> {
    m.get(k, kw)
        .ok_or_else(|| ParseError::MissingSection(format!("{k}. {kw}")))
}

fn render_names(names: &[String]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

fn render_intervals(ivs: &[TimeInterval]) -> String {
    let parts: Vec<String> = ivs.iter().map(|iv| format!("({}, {})", iv.start(), iv.end())).collect();
    format!("[{}]", parts.join(", "))
}

fn render_key_characters(kcs: &[KeyCharacter]) -> String {
    let parts: Vec<String> = kcs
        .iter()
        .map(|k| format!("({}, {})", k.synonym, k.identifier))
        .collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Scene split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitReply {
    pub description: String,
    pub single: bool,
    /// Frame indices where a new scene starts; empty when `single`.
    pub frames: Vec<i64>,
}

impl Reply for SplitReply {
    const FORMAT: &'static str = "[1. Description]: ...\n[2. Single: yes/no]: yes or no\n[3. Frames]: [i, j, ...]";

    fn render(&self) -> String {
        let frames: Vec<String> = self.frames.iter().map(i64::to_string).collect();
        format!(
            "[1. Description]: {}\n[2. Single: yes/no]: {}\n[3. Frames]: [{}]",
            self.description,
            if self.single { "Yes." } else { "No." },
            frames.join(", ")
        )
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "desc"), (2, "single"), (3, "frame")]);
        let single = parse_yes_no(required(&m, 2, "single")?)?;
        let frames = match (single, m.get(3, "frame")) {
            (true, Some(body)) => {
                if !parse_frame_list(body).map(|f| f.is_empty()).unwrap_or(true) {
                    out.warn("frames listed for a single scene were ignored");
                }
                Vec::new()
            }
            (true, None) => Vec::new(),
            (false, Some(body)) => parse_frame_list(body)?,
            (false, None) => return Err(ParseError::MissingSection("3. Frames".into())),
        };
        Ok(out.with(SplitReply {
            description: m.get(1, "desc").unwrap_or_default().to_string(),
            single,
            frames,
        }))
    }
}

/// Boundary merge replies are a bare yes/no.
pub fn parse_merge_decision(text: &str) -> Result<Parsed<bool>, ParseError> {
    parse_yes_no(text).map(Parsed::new)
}

// ---------------------------------------------------------------------------
// Character selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterDetail {
    pub name: String,
    pub description: String,
    pub frame: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterReply {
    pub appeared: Vec<String>,
    pub details: Vec<CharacterDetail>,
}

static DETAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\[\s*NAME\s*:\s*([^\]]*?)\s*\]\s*,?\s*\[\s*DESCRIPTION\s*:\s*([^\]]*?)\s*\]\s*,?\s*\[\s*FRAME\s*:\s*([^\]]*?)\s*\]",
    )
    .unwrap()
});

impl Reply for CharacterReply {
    const FORMAT: &'static str = "[1. Appeared Characters]: [\"name\", ...]\n[2. Character Details]:\n[Visual Memory 1:] [[NAME: name], [DESCRIPTION: description], [FRAME: index]] [Visual Memory Ends]";

    fn render(&self) -> String {
        let mut s = format!(
            "[1. Appeared Characters]: {}\n[2. Character Details]:\n",
            render_names(&self.appeared)
        );
        for (i, d) in self.details.iter().enumerate() {
            s.push_str(&format!(
                "[Visual Memory {}:] [[NAME: {}], [DESCRIPTION: {}], [FRAME: {}]] [Visual Memory Ends]\n",
                i + 1,
                d.name,
                d.description,
                d.frame
            ));
        }
        s
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let sections = parse_sections(text);
        let mut out = Parsed::new(());
        let (appeared, details_body) = match &sections {
            Ok(m) => {
                out.warnings = m.flags(&[(1, "appeared"), (2, "detail")]);
                let appeared = m
                    .get(1, "appeared")
                    .map(|b| out.absorb(parse_name_list(b)))
                    .unwrap_or_default();
                (appeared, m.get(2, "detail").unwrap_or(text))
            }
            Err(_) => (Vec::new(), text),
        };
        let mut details: Vec<CharacterDetail> = Vec::new();
        for cap in DETAIL.captures_iter(details_body) {
            let Some(name) = normalize_name(&cap[1]) else {
                out.warn(format!("detail with empty name {:?}", &cap[1]));
                continue;
            };
            let Ok(frame) = cap[3].trim().parse::<i64>() else {
                out.warn(format!("detail {name} has non-integer frame {:?}", &cap[3]));
                continue;
            };
            if details.iter().any(|d| d.name == name) {
                out.warn(format!("duplicate detail for {name} ignored"));
                continue;
            }
            details.push(CharacterDetail {
                name,
                description: clean_body(&cap[2]),
                frame,
            });
        }
        if sections.is_err() && details.is_empty() {
            return Err(ParseError::NoSections);
        }
        for a in &appeared {
            if !details.iter().any(|d| &d.name == a) {
                out.warn(format!("{a} listed as appeared but has no details"));
            }
        }
        Ok(out.with(CharacterReply { appeared, details }))
    }
}

// ---------------------------------------------------------------------------
// Dense caption / caption modification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionReply {
    pub brief: String,
    pub appeared: Vec<String>,
    pub detailed: String,
}

impl Reply for CaptionReply {
    const FORMAT: &'static str =
        "[1. Brief Description]: ...\n[2. Appeared Characters]: [\"name\", ...]\n[3. Detailed Description]: ...";

    fn render(&self) -> String {
        format!(
            "[1. Brief Description]: {}\n[2. Appeared Characters]: {}\n[3. Detailed Description]: {}",
            self.brief,
            render_names(&self.appeared),
            self.detailed
        )
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "brief"), (2, "appeared"), (3, "detail")]);
        let detailed = required(&m, 3, "detail")?.to_string();
        let brief = match m.get(1, "brief") {
            Some(b) => b.to_string(),
            None => {
                out.warn("missing brief description");
                String::new()
            }
        };
        let appeared = m
            .get(2, "appeared")
            .map(|b| out.absorb(parse_name_list(b)))
            .unwrap_or_default();
        Ok(out.with(CaptionReply {
            brief,
            appeared,
            detailed,
        }))
    }
}

// ---------------------------------------------------------------------------
// Character merge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeReply {
    pub triples: Vec<MergeTriple>,
}

static REPEATED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*repeated\s+characters\s+and\s+objects\s*:?\s*\]\s*:?").unwrap());

impl Reply for MergeReply {
    const FORMAT: &'static str = "[Repeated Characters and Objects]: (name_in_set_1, name_in_set_2, better_name), ...";

    fn render(&self) -> String {
        if self.triples.is_empty() {
            return "[Repeated Characters and Objects]: None".to_string();
        }
        let parts: Vec<String> = self
            .triples
            .iter()
            .map(|(a, b, c)| format!("({a}, {b}, {c})"))
            .collect();
        format!("[Repeated Characters and Objects]: {}", parts.join(", "))
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let body = match REPEATED.find(text) {
            Some(m) => &text[m.end()..],
            None => text,
        };
        let p = parse_merge_tuples(body)?;
        Ok(Parsed {
            value: MergeReply { triples: p.value },
            warnings: p.warnings,
        })
    }
}

// ---------------------------------------------------------------------------
// Segment intention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReply {
    pub reasoning: String,
    pub relevant: Vec<TimeInterval>,
    pub confidence: Confidence,
    pub key_characters: Vec<KeyCharacter>,
}

fn key_characters_or_empty(m: &SectionMap, k: u32, out: &mut Parsed<()>) -> Result<Vec<KeyCharacter>, ParseError> {
    match m.get(k, "key") {
        Some(body) => Ok(out.absorb(parse_key_characters(body)?)),
        None => {
            out.warn("missing key characters");
            Ok(Vec::new())
        }
    }
}

impl Reply for SegmentReply {
    const FORMAT: &'static str = "[1. Reasoning]: ...\n[2. Relevant Segments]: [(t_start, t_end), ...]\n[3. Confidence Level]: 1-5\n[4. Key Characters]: [(synonym, identifier), ...]";

    fn render(&self) -> String {
        format!(
            "[1. Reasoning]: {}\n[2. Relevant Segments]: {}\n[3. Confidence Level]: {}\n[4. Key Characters]: {}",
            self.reasoning,
            render_intervals(&self.relevant),
            self.confidence.get(),
            render_key_characters(&self.key_characters)
        )
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "reason"), (2, "relevant"), (3, "confidence"), (4, "key")]);
        let relevant = out.absorb(parse_interval_list(required(&m, 2, "relevant")?)?);
        let confidence = match m.get(3, "confidence").map(parse_confidence) {
            Some(Ok(c)) => out.absorb(c),
            Some(Err(e)) => {
                out.warn(format!("{e}; using minimum confidence"));
                Confidence::MIN
            }
            None => {
                out.warn("missing confidence; using minimum");
                Confidence::MIN
            }
        };
        let key_characters = key_characters_or_empty(&m, 4, &mut out)?;
        Ok(out.with(SegmentReply {
            reasoning: m.get(1, "reason").unwrap_or_default().to_string(),
            relevant,
            confidence,
            key_characters,
        }))
    }
}

// ---------------------------------------------------------------------------
// Global intention
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalReply {
    pub reasoning: String,
    pub relevant: Vec<TimeInterval>,
    pub key_characters: Vec<KeyCharacter>,
    pub scope: QuestionScope,
}

impl Reply for GlobalReply {
    const FORMAT: &'static str = "[1. Reasoning]: ...\n[2. Relevant Segments]: [(t_start, t_end), ...]\n[3. Key Characters]: [(synonym, identifier), ...]\n[4. Local or Global]: local or global";

    fn render(&self) -> String {
        format!(
            "[1. Reasoning]: {}\n[2. Relevant Segments]: {}\n[3. Key Characters]: {}\n[4. Local or Global]: {}",
            self.reasoning,
            render_intervals(&self.relevant),
            render_key_characters(&self.key_characters),
            match self.scope {
                QuestionScope::Local => "Local",
                QuestionScope::Global => "Global",
            }
        )
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "reason"), (2, "relevant"), (3, "key"), (4, "local")]);
        let relevant = out.absorb(parse_interval_list(required(&m, 2, "relevant")?)?);
        let key_characters = key_characters_or_empty(&m, 3, &mut out)?;
        let scope = match m.get(4, "local").map(parse_scope) {
            Some(Ok(s)) => s,
            Some(Err(e)) => {
                out.warn(format!("{e}; assuming local"));
                QuestionScope::Local
            }
            None => {
                out.warn("missing local/global section; assuming local");
                QuestionScope::Local
            }
        };
        Ok(out.with(GlobalReply {
            reasoning: m.get(1, "reason").unwrap_or_default().to_string(),
            relevant,
            key_characters,
            scope,
        }))
    }
}

// ---------------------------------------------------------------------------
// Goal proposal
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalReply {
    pub reasoning: String,
    pub local_question: String,
    pub global_question: String,
}

impl Reply for GoalReply {
    const FORMAT: &'static str = "[1. Reasoning]: ...\n[2. Local Question]: ...\n[3. Global Question]: ...";

    fn render(&self) -> String {
        format!(
            "[1. Reasoning]: {}\n[2. Local Question]: {}\n[3. Global Question]: {}",
            self.reasoning, self.local_question, self.global_question
        )
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "reason"), (2, "local"), (3, "global")]);
        let local_question = required(&m, 2, "local")?.to_string();
        let global_question = required(&m, 3, "global")?.to_string();
        if local_question.is_empty() || global_question.is_empty() {
            return Err(ParseError::invalid("goal proposal", "empty question"));
        }
        Ok(out.with(GoalReply {
            reasoning: m.get(1, "reason").unwrap_or_default().to_string(),
            local_question,
            global_question,
        }))
    }
}

// ---------------------------------------------------------------------------
// Answer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerReply {
    pub reasoning: String,
    pub letter: AnswerLetter,
}

impl Reply for AnswerReply {
    const FORMAT: &'static str = "[1. Reasoning]: ...\n[2. Answer]: one capital letter from A to E";

    fn render(&self) -> String {
        format!("[1. Reasoning]: {}\n[2. Answer]: {}", self.reasoning, self.letter)
    }

    fn parse(text: &str) -> Result<Parsed<Self>, ParseError> {
        let m = parse_sections(text)?;
        let mut out = Parsed::new(());
        out.warnings = m.flags(&[(1, "reason"), (2, "answer")]);
        let letter = parse_answer_letter(required(&m, 2, "answer")?)?;
        Ok(out.with(AnswerReply {
            reasoning: m.get(1, "reason").unwrap_or_default().to_string(),
            letter,
        }))
    }
}

/// Output-format reminder for a stage, used by repair requests.
pub fn format_hint(stage: StageTag) -> &'static str {
    match stage {
        StageTag::SceneSplit => SplitReply::FORMAT,
        StageTag::SceneMerge => "Reply with a single word: yes or no.",
        StageTag::CharacterSelect => CharacterReply::FORMAT,
        StageTag::DenseCaption | StageTag::CaptionModify => CaptionReply::FORMAT,
        StageTag::CharacterMerge => MergeReply::FORMAT,
        StageTag::SegmentIntention => SegmentReply::FORMAT,
        StageTag::GlobalIntention => GlobalReply::FORMAT,
        StageTag::GoalProposal => GoalReply::FORMAT,
        StageTag::Answer | StageTag::Baseline => AnswerReply::FORMAT,
        StageTag::LocalPerception | StageTag::GlobalPerception => "Answer in plain text.",
    }
}
