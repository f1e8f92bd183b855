//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is an immutable value object. Serialization shapes are
//! stable: the scene record layout doubles as the on-disk scenes file format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Time in seconds from the start of a video.
pub type Seconds = f64;

/// Hard upper bound on images attached to a single pipeline model request.
pub const MAX_IMAGES_PER_REQUEST: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid input: {0}")]
pub struct InvalidInput(pub String);

impl InvalidInput {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// Round to one decimal place, the precision used when printing times.
pub fn round_tenth(t: Seconds) -> Seconds {
    (t * 10.0).round() / 10.0
}

// ---------------------------------------------------------------------------
// TimeInterval
// ---------------------------------------------------------------------------

/// Half-open time span `[start, end)` with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct TimeInterval {
    start: Seconds,
    end: Seconds,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    t_start: f64,
    t_end: f64,
}

impl TryFrom<RawInterval> for TimeInterval {
    type Error = InvalidInput;
    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        TimeInterval::new(raw.t_start, raw.t_end)
    }
}

impl From<TimeInterval> for RawInterval {
    fn from(iv: TimeInterval) -> Self {
        RawInterval {
            t_start: iv.start,
            t_end: iv.end,
        }
    }
}

impl TimeInterval {
    pub fn new(start: Seconds, end: Seconds) -> Result<Self, InvalidInput> {
        if !start.is_finite() || !end.is_finite() {
            return Err(InvalidInput::new("interval bounds must be finite"));
        }
        if start < 0.0 {
            return Err(InvalidInput::new(format!("interval start {start} is negative")));
        }
        if start >= end {
            return Err(InvalidInput::new(format!(
                "interval start {start} must precede end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> Seconds {
        self.start
    }

    pub fn end(&self) -> Seconds {
        self.end
    }

    pub fn duration(&self) -> Seconds {
        self.end - self.start
    }

    pub fn midpoint(&self) -> Seconds {
        (self.start + self.end) / 2.0
    }

    /// Positive-measure overlap; touching endpoints do not count.
    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start.max(other.start) < self.end.min(other.end)
    }

    pub fn contains_time(&self, t: Seconds) -> bool {
        t >= self.start && t < self.end
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        other.start >= self.start && other.end <= self.end
    }

    pub fn intersect(&self, other: &TimeInterval) -> Option<TimeInterval> {
        TimeInterval::new(self.start.max(other.start), self.end.min(other.end)).ok()
    }

    /// Smallest interval covering both.
    pub fn hull(&self, other: &TimeInterval) -> TimeInterval {
        TimeInterval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    /// Whether the interval lies inside `[0, duration]`.
    pub fn within_video(&self, duration: Seconds) -> bool {
        self.end <= duration
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.1}, {:.1})", self.start, self.end)
    }
}

/// Sorts intervals and unions every overlapping or touching pair.
pub fn merge_intervals(intervals: &[TimeInterval]) -> Vec<TimeInterval> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut out: Vec<TimeInterval> = Vec::with_capacity(sorted.len());
    for iv in sorted {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// Encoded image bytes carried in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineImage {
    pub mime: String,
    #[serde(with = "b64")]
    pub bytes: Arc<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageHandle {
    File { path: PathBuf },
    Inline(InlineImage),
}

impl ImageHandle {
    pub fn inline(mime: impl Into<String>, bytes: Vec<u8>) -> Self {
        ImageHandle::Inline(InlineImage {
            mime: mime.into(),
            bytes: Arc::new(bytes),
        })
    }

    /// Loads the encoded bytes and their mime type.
    pub fn load(&self) -> std::io::Result<(String, Arc<Vec<u8>>)> {
        match self {
            ImageHandle::Inline(img) => Ok((img.mime.clone(), img.bytes.clone())),
            ImageHandle::File { path } => {
                let bytes = std::fs::read(path)?;
                Ok((mime_for_path(path).to_string(), Arc::new(bytes)))
            }
        }
    }
}

pub fn mime_for_path(path: &std::path::Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

mod b64 {
    use std::sync::Arc;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Arc<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes.as_slice()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arc<Vec<u8>>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map(Arc::new).map_err(serde::de::Error::custom)
    }
}

/// A decoded frame of a video at a given timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub timestamp: Seconds,
    pub image: ImageHandle,
}

// ---------------------------------------------------------------------------
// Captions and characters
// ---------------------------------------------------------------------------

/// One atomic span of a video with its captions.
///
/// Serializes to the scenes-file record layout
/// `{scene_id, t_start, t_end, brief, detailed, appeared}` with times at one
/// decimal place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneRecord", into = "SceneRecord")]
pub struct Scene {
    pub scene_id: u32,
    pub interval: TimeInterval,
    pub brief: String,
    pub detailed: String,
    pub appeared_characters: Vec<String>,
    /// Set when the unit failed permanently and the text is raw or empty.
    pub degraded: bool,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    scene_id: u32,
    #[serde(serialize_with = "one_decimal")]
    t_start: f64,
    #[serde(serialize_with = "one_decimal")]
    t_end: f64,
    brief: String,
    detailed: String,
    appeared: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    degraded: bool,
}

fn one_decimal<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_tenth(*t))
}

impl TryFrom<SceneRecord> for Scene {
    type Error = InvalidInput;
    fn try_from(r: SceneRecord) -> Result<Self, Self::Error> {
        Ok(Scene {
            scene_id: r.scene_id,
            interval: TimeInterval::new(r.t_start, r.t_end)?,
            brief: r.brief,
            detailed: r.detailed,
            appeared_characters: r.appeared,
            degraded: r.degraded,
        })
    }
}

impl From<Scene> for SceneRecord {
    fn from(s: Scene) -> Self {
        SceneRecord {
            scene_id: s.scene_id,
            t_start: s.interval.start(),
            t_end: s.interval.end(),
            brief: s.brief,
            detailed: s.detailed,
            appeared: s.appeared_characters,
            degraded: s.degraded,
        }
    }
}

impl Scene {
    /// The caption line used when scenes are listed for a language model.
    pub fn caption_line(&self) -> String {
        let text = match (self.brief.trim(), self.detailed.trim()) {
            ("", d) => d.to_string(),
            (b, "") => b.to_string(),
            (b, d) => format!("{b} {d}"),
        };
        format!("{}: {}", self.interval, text.replace('\n', " "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub name: String,
    pub description: String,
    pub representative_frame: FrameRef,
}

/// Canonical characters plus the map from every extracted name to its
/// canonical name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CharacterRegistry {
    pub records: Vec<CharacterRecord>,
    pub rename_map: BTreeMap<String, String>,
}

impl CharacterRegistry {
    /// Applies the rename map once; names outside its domain pass through.
    pub fn rename<'a>(&'a self, name: &'a str) -> &'a str {
        self.rename_map.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.iter().any(|r| r.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&CharacterRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn is_rename_idempotent(&self) -> bool {
        self.rename_map
            .values()
            .all(|canonical| self.rename(canonical) == canonical)
    }

    /// Registry invariants: unique record names and every canonical name is
    /// a record.
    pub fn validate(&self) -> Result<(), InvalidInput> {
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.name.as_str()) {
                return Err(InvalidInput::new(format!("duplicate record name {}", r.name)));
            }
        }
        for (old, new) in &self.rename_map {
            if !seen.contains(new.as_str()) {
                return Err(InvalidInput::new(format!(
                    "rename {old} -> {new} targets an unknown record"
                )));
            }
        }
        if !self.is_rename_idempotent() {
            return Err(InvalidInput::new("rename map is not idempotent"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Analysis records
// ---------------------------------------------------------------------------

/// Integer confidence in `1..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Confidence(u8);

impl Confidence {
    pub const MIN: Confidence = Confidence(1);
    pub const MAX: Confidence = Confidence(5);

    pub fn new(v: u8) -> Result<Self, InvalidInput> {
        if (1..=5).contains(&v) {
            Ok(Confidence(v))
        } else {
            Err(InvalidInput::new(format!("confidence {v} outside 1..=5")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Confidence {
    type Error = InvalidInput;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Confidence::new(v)
    }
}

impl From<Confidence> for u8 {
    fn from(c: Confidence) -> u8 {
        c.0
    }
}

/// How a character mentioned in a question maps onto the captions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCharacter {
    pub synonym: String,
    pub identifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnalysis {
    pub chunk_id: u32,
    pub reasoning: String,
    pub relevant: Vec<TimeInterval>,
    pub confidence: Confidence,
    pub key_characters: Vec<KeyCharacter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionScope {
    Local,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAnalysis {
    pub reasoning: String,
    pub relevant: Vec<TimeInterval>,
    pub key_characters: Vec<KeyCharacter>,
    pub scope: QuestionScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalProposal {
    pub reasoning: String,
    pub local_question: String,
    pub global_question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerceptionScope {
    Local { interval: TimeInterval },
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionResult {
    pub scope: PerceptionScope,
    pub query: String,
    pub answer: String,
    pub frames_used: Vec<FrameRef>,
    #[serde(default)]
    pub degraded: bool,
}

/// Multiple-choice option label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnswerLetter {
    A,
    B,
    C,
    D,
    E,
}

impl AnswerLetter {
    pub const ALL: [AnswerLetter; 5] = [
        AnswerLetter::A,
        AnswerLetter::B,
        AnswerLetter::C,
        AnswerLetter::D,
        AnswerLetter::E,
    ];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A'..='E' => Self::from_index((c as u8 - b'A') as usize),
            _ => None,
        }
    }
}

impl fmt::Display for AnswerLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for AnswerLetter {
    type Err = InvalidInput;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Self::from_char(c).ok_or_else(|| InvalidInput::new(format!("bad letter {s:?}"))),
            _ => Err(InvalidInput::new(format!("bad letter {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub reasoning: String,
    pub letter: AnswerLetter,
    /// True when the letter is the fallback guess rather than a parsed answer.
    #[serde(default)]
    pub guessed: bool,
}

// ---------------------------------------------------------------------------
// Questions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub video_id: String,
    pub text: String,
    /// Option texts; position `i` carries label `A + i`.
    pub options: Vec<String>,
    pub category: Option<String>,
    pub gt_answer: Option<AnswerLetter>,
    pub gt_interval: Option<TimeInterval>,
}

impl Question {
    pub fn labeled_options(&self) -> impl Iterator<Item = (AnswerLetter, &str)> {
        self.options
            .iter()
            .enumerate()
            .filter_map(|(i, o)| AnswerLetter::from_index(i).map(|l| (l, o.as_str())))
    }

    /// Options rendered as `(A) ... (B) ...` on one line.
    pub fn options_inline(&self) -> String {
        self.labeled_options()
            .map(|(l, o)| format!("({l}) {o}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Question text followed by its options, one per line.
    pub fn render(&self) -> String {
        let mut s = self.text.trim().to_string();
        for (l, o) in self.labeled_options() {
            s.push_str(&format!("\n({l}) {o}"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Model requests
// ---------------------------------------------------------------------------

/// Which pipeline step issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    SceneSplit,
    SceneMerge,
    CharacterSelect,
    DenseCaption,
    CharacterMerge,
    CaptionModify,
    SegmentIntention,
    GlobalIntention,
    GoalProposal,
    LocalPerception,
    GlobalPerception,
    Answer,
    Baseline,
}

/// Which of the two configured models serves a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelRole {
    Vision,
    Language,
}

impl StageTag {
    pub const ALL: [StageTag; 13] = [
        StageTag::SceneSplit,
        StageTag::SceneMerge,
        StageTag::CharacterSelect,
        StageTag::DenseCaption,
        StageTag::CharacterMerge,
        StageTag::CaptionModify,
        StageTag::SegmentIntention,
        StageTag::GlobalIntention,
        StageTag::GoalProposal,
        StageTag::LocalPerception,
        StageTag::GlobalPerception,
        StageTag::Answer,
        StageTag::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::SceneSplit => "scene_split",
            StageTag::SceneMerge => "scene_merge",
            StageTag::CharacterSelect => "character_select",
            StageTag::DenseCaption => "dense_caption",
            StageTag::CharacterMerge => "character_merge",
            StageTag::CaptionModify => "caption_modify",
            StageTag::SegmentIntention => "segment_intention",
            StageTag::GlobalIntention => "global_intention",
            StageTag::GoalProposal => "goal_proposal",
            StageTag::LocalPerception => "local_perception",
            StageTag::GlobalPerception => "global_perception",
            StageTag::Answer => "answer",
            StageTag::Baseline => "baseline",
        }
    }

    pub fn role(self) -> ModelRole {
        match self {
            StageTag::SegmentIntention | StageTag::GlobalIntention | StageTag::GoalProposal | StageTag::Answer => {
                ModelRole::Language
            }
            _ => ModelRole::Vision,
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageTag {
    type Err = InvalidInput;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| InvalidInput::new(format!("unknown stage tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { frame: FrameRef },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text { text: s.into() }
    }

    pub fn image(frame: FrameRef) -> Self {
        Part::Image { frame }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub stage: StageTag,
    pub unit_id: String,
    pub parts: Vec<Part>,
    #[serde(default)]
    pub params: GenerationParams,
    /// Only the uniform-sampling baseline may exceed the image cap.
    #[serde(default)]
    pub baseline: bool,
}

impl ModelRequest {
    pub fn new(stage: StageTag, unit_id: impl Into<String>, parts: Vec<Part>) -> Self {
        Self {
            stage,
            unit_id: unit_id.into(),
            parts,
            params: GenerationParams::default(),
            baseline: false,
        }
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, Part::Image { .. })).count()
    }

    pub fn text_chars(&self) -> usize {
        self.parts
            .iter()
            .map(|p| match p {
                Part::Text { text } => text.chars().count(),
                Part::Image { .. } => 0,
            })
            .sum()
    }

    /// Concatenated text parts, for logging and tests.
    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Usage of one or more calls. Monetary cost is kept in integer
/// nano-dollars so that ledger sums are exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub input_units: u64,
    pub output_units: u64,
    pub cost_nanos: u64,
}

impl Usage {
    pub fn is_zero(&self) -> bool {
        *self == Usage::default()
    }

    pub fn cost_usd(&self) -> f64 {
        self.cost_nanos as f64 / 1e9
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;
    fn add(self, o: Usage) -> Usage {
        Usage {
            calls: self.calls + o.calls,
            input_units: self.input_units + o.input_units,
            output_units: self.output_units + o.output_units,
            cost_nanos: self.cost_nanos + o.cost_nanos,
        }
    }
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, o: Usage) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
}

/// Lenient deserialization helper for optional letters such as `"B"`.
pub fn deserialize_letter_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AnswerLetter>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    match s {
        None => Ok(None),
        Some(s) if s.trim().is_empty() => Ok(None),
        Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn interval_rejects_bad_bounds() {
        assert!(TimeInterval::new(5.0, 5.0).is_err());
        assert!(TimeInterval::new(6.0, 5.0).is_err());
        assert!(TimeInterval::new(-1.0, 5.0).is_err());
        assert!(TimeInterval::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn touching_intervals_do_not_overlap() {
        assert!(iv(100.0, 150.0).overlaps(&iv(140.0, 160.0)));
        assert!(!iv(100.0, 150.0).overlaps(&iv(150.0, 160.0)));
    }

    #[test]
    fn merge_unions_adjacent_and_overlapping() {
        let merged = merge_intervals(&[iv(40.0, 60.0), iv(10.0, 20.0), iv(20.0, 25.0), iv(50.0, 70.0)]);
        assert_eq!(merged, vec![iv(10.0, 25.0), iv(40.0, 70.0)]);
    }

    #[test]
    fn scene_serializes_with_file_field_names() {
        let scene = Scene {
            scene_id: 3,
            interval: iv(2.5, 4.5),
            brief: "b".into(),
            detailed: "d <person_a>".into(),
            appeared_characters: vec!["person_a".into()],
            degraded: false,
        };
        let json = serde_json::to_string(&scene).unwrap();
        assert_eq!(
            json,
            r#"{"scene_id":3,"t_start":2.5,"t_end":4.5,"brief":"b","detailed":"d <person_a>","appeared":["person_a"]}"#
        );
        let whole = Scene {
            interval: iv(0.0, 55.0),
            ..scene
        };
        let json = serde_json::to_string(&whole).unwrap();
        assert!(json.contains(r#""t_start":0.0,"t_end":55.0"#), "{json}");
    }

    #[test]
    fn deserialize_rejects_inverted_interval() {
        let bad = r#"{"t_start":5.0,"t_end":1.0}"#;
        assert!(serde_json::from_str::<TimeInterval>(bad).is_err());
    }

    #[test]
    fn answer_letters_parse() {
        assert_eq!("B".parse::<AnswerLetter>().unwrap(), AnswerLetter::B);
        assert!("F".parse::<AnswerLetter>().is_err());
        assert_eq!(AnswerLetter::from_index(4), Some(AnswerLetter::E));
        assert_eq!(AnswerLetter::from_index(5), None);
    }

    #[test]
    fn stage_tags_roundtrip_through_strings() {
        for t in StageTag::ALL {
            assert_eq!(t.as_str().parse::<StageTag>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
        }
    }

    fn arb_interval() -> impl Strategy<Value = TimeInterval> {
        (0u32..100_000, 1u32..10_000).prop_map(|(s, d)| iv(s as f64 / 10.0, (s + d) as f64 / 10.0))
    }

    fn arb_frame() -> impl Strategy<Value = FrameRef> {
        (
            "[a-z0-9]{1,8}",
            0u32..100_000,
            prop::collection::vec(any::<u8>(), 0..16),
            any::<bool>(),
        )
            .prop_map(|(vid, t, bytes, inline)| FrameRef {
                video_id: vid.clone(),
                timestamp: t as f64 / 2.0,
                image: if inline {
                    ImageHandle::inline("image/png", bytes)
                } else {
                    ImageHandle::File {
                        path: PathBuf::from(format!("frames/{vid}.png")),
                    }
                },
            })
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[ -~\n]{0,40}"
    }

    fn arb_scene() -> impl Strategy<Value = Scene> {
        (
            any::<u32>(),
            arb_interval(),
            arb_text(),
            arb_text(),
            prop::collection::vec("[a-z_]{1,10}", 0..4),
            any::<bool>(),
        )
            .prop_map(|(id, interval, brief, detailed, appeared, degraded)| Scene {
                scene_id: id,
                interval,
                brief,
                detailed,
                appeared_characters: appeared,
                degraded,
            })
    }

    fn arb_key_chars() -> impl Strategy<Value = Vec<KeyCharacter>> {
        prop::collection::vec(
            (arb_text(), arb_text()).prop_map(|(synonym, identifier)| KeyCharacter { synonym, identifier }),
            0..3,
        )
    }

    fn roundtrip<T>(v: &T) -> T
    where
        T: Serialize + for<'de> Deserialize<'de>,
    {
        serde_json::from_str(&serde_json::to_string(v).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn scenes_roundtrip(scene in arb_scene()) {
            prop_assert_eq!(roundtrip(&scene), scene);
        }

        #[test]
        fn frames_and_records_roundtrip(frame in arb_frame(), name in "[a-z_]{1,10}", desc in arb_text()) {
            let rec = CharacterRecord { name, description: desc, representative_frame: frame.clone() };
            prop_assert_eq!(roundtrip(&frame), frame);
            prop_assert_eq!(roundtrip(&rec), rec);
        }

        #[test]
        fn analyses_roundtrip(
            chunk in any::<u32>(),
            reasoning in arb_text(),
            relevant in prop::collection::vec(arb_interval(), 0..5),
            conf in 1u8..=5,
            keys in arb_key_chars(),
            global in any::<bool>(),
        ) {
            let seg = SegmentAnalysis {
                chunk_id: chunk,
                reasoning: reasoning.clone(),
                relevant: relevant.clone(),
                confidence: Confidence::new(conf).unwrap(),
                key_characters: keys.clone(),
            };
            prop_assert_eq!(roundtrip(&seg), seg);
            let g = GlobalAnalysis {
                reasoning,
                relevant,
                key_characters: keys,
                scope: if global { QuestionScope::Global } else { QuestionScope::Local },
            };
            prop_assert_eq!(roundtrip(&g), g);
        }

        #[test]
        fn requests_and_answers_roundtrip(
            text in arb_text(),
            frames in prop::collection::vec(arb_frame(), 0..4),
            letter in 0usize..5,
            guessed in any::<bool>(),
            iv in arb_interval(),
        ) {
            let mut parts = vec![Part::text(text.clone())];
            parts.extend(frames.iter().cloned().map(Part::image));
            let req = ModelRequest::new(StageTag::DenseCaption, "v/u0001", parts);
            prop_assert_eq!(roundtrip(&req), req);
            let ans = FinalAnswer { reasoning: text.clone(), letter: AnswerLetter::from_index(letter).unwrap(), guessed };
            prop_assert_eq!(roundtrip(&ans), ans);
            let p = PerceptionResult {
                scope: PerceptionScope::Local { interval: iv },
                query: text.clone(),
                answer: text.clone(),
                frames_used: frames,
                degraded: guessed,
            };
            prop_assert_eq!(roundtrip(&p), p);
            let goals = GoalProposal { reasoning: text.clone(), local_question: text.clone(), global_question: text };
            prop_assert_eq!(roundtrip(&goals), goals);
        }

        #[test]
        fn questions_roundtrip(
            id in "[a-z0-9]{1,6}",
            text in arb_text(),
            options in prop::collection::vec(arb_text(), 2..=5),
            gt in prop::option::of(0usize..5),
            interval in prop::option::of(arb_interval()),
        ) {
            let q = Question {
                question_id: id.clone(),
                video_id: id,
                text,
                options,
                category: Some("KIR".into()),
                gt_answer: gt.and_then(AnswerLetter::from_index),
                gt_interval: interval,
            };
            prop_assert_eq!(roundtrip(&q), q);
        }
    }
}
