//! Shared helpers for the CLI test targets: fixture paths, a cheap frame
//! source and a backend that invents well-formed replies for every stage.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::LazyLock;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use regex::Regex;

use vmr_core::gateway::{request_digest, Backend, BackendError, Completion};
use vmr_core::types::{FrameRef, GenerationParams, ImageHandle, ModelRequest, Part, Seconds, StageTag};
use vmr_core::video::{FrameSource, VideoError};

// ---------------------------------------------------------------------------
// Fixture
// ---------------------------------------------------------------------------

pub const FIXTURE_VIDEO: &str = "synth600";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synth600")
}

pub fn fixture_config() -> PathBuf {
    fixture_dir().join("vmr.toml")
}

pub fn fixture_videos() -> PathBuf {
    fixture_dir().join("videos")
}

pub fn fixture_calls() -> PathBuf {
    fixture_dir().join("calls")
}

pub fn fixture_benchmark() -> PathBuf {
    fixture_dir().join("benchmark.json")
}

// ---------------------------------------------------------------------------
// Frame source
// ---------------------------------------------------------------------------

/// Frames whose bytes are just the timestamp; skips image encoding.
pub struct TinyVideo {
    pub id: String,
    pub duration: Seconds,
}

impl FrameSource for TinyVideo {
    fn video_id(&self) -> &str {
        &self.id
    }

    fn duration(&self) -> Seconds {
        self.duration
    }

    fn frames(&self, times: &[Seconds]) -> Result<Vec<FrameRef>, VideoError> {
        if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= self.duration)) {
            return Err(VideoError::OutOfRange {
                t: *t,
                duration: self.duration,
            });
        }
        Ok(times
            .iter()
            .map(|&t| FrameRef {
                video_id: self.id.clone(),
                timestamp: t,
                image: ImageHandle::inline("image/png", format!("{t:.3}").into_bytes()),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Auto-responder
// ---------------------------------------------------------------------------

static MEMORY_NAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[NAME: ([a-z0-9_]+)\]").unwrap());

const KINDS: [&str; 6] = ["person", "dog", "cat", "car", "ball", "red_car"];
const WORDS: [&str; 12] = [
    "the", "man", "walks", "slowly", "towards", "a", "door", "while", "music", "plays", "outside", "again",
];

/// Replies in each stage's grammar with random content seeded by the
/// request digest, so identical requests always get identical replies.
/// Also audits what it was sent.
#[derive(Default)]
pub struct AutoBackend {
    pub calls: AtomicU64,
    pub baseline_calls: AtomicU64,
    /// Largest image count seen on a request without the baseline flag.
    pub max_plain_images: AtomicUsize,
    /// Requests over the cap that were not flagged baseline.
    pub oversized_unflagged: AtomicU64,
    /// Baseline-stage requests missing the flag, or flagged non-baseline.
    pub flag_mismatches: AtomicU64,
    /// Percent chance of an unparseable reply.
    pub garbage_pct: u32,
}

impl AutoBackend {
    pub fn new(garbage_pct: u32) -> Self {
        Self {
            garbage_pct,
            ..Default::default()
        }
    }
}

fn sentence(rng: &mut StdRng, min: usize) -> String {
    let n = rng.gen_range(min..min + 8);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fresh_name(rng: &mut StdRng) -> String {
    format!(
        "{}_{}",
        KINDS.choose(rng).unwrap(),
        (b'a' + rng.gen_range(0..4)) as char
    )
}

fn intervals(rng: &mut StdRng, max: usize) -> String {
    let n = rng.gen_range(0..=max);
    let parts: Vec<String> = (0..n)
        .map(|_| {
            let a = rng.gen_range(0.0..1600.0f64).round();
            let b = a + rng.gen_range(-5.0..300.0f64).round();
            format!("({a}, {b})")
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

fn memory_names(req: &ModelRequest) -> Vec<String> {
    let mut out = Vec::new();
    for p in &req.parts {
        if let Part::Text { text } = p {
            for c in MEMORY_NAME.captures_iter(text) {
                if !out.contains(&c[1].to_string()) {
                    out.push(c[1].to_string());
                }
            }
        }
    }
    out
}

fn reply(req: &ModelRequest, rng: &mut StdRng) -> String {
    let images = req.image_count() as i64;
    match req.stage {
        StageTag::SceneSplit => {
            if rng.gen_bool(0.6) {
                format!("[1. Description]: {}\n[2. Single: yes/no]: Yes.\n[3. Frames]: []", sentence(rng, 3))
            } else {
                let n = rng.gen_range(1..=3);
                let frames: Vec<String> = (0..n).map(|_| rng.gen_range(-1..images + 3).to_string()).collect();
                format!(
                    "[1. Description]: {}\n[2. Single: yes/no]: No.\n[3. Frames]: [{}]",
                    sentence(rng, 3),
                    frames.join(", ")
                )
            }
        }
        StageTag::SceneMerge => if rng.gen_bool(0.5) { "yes" } else { "no" }.to_string(),
        StageTag::CharacterSelect => {
            let n = rng.gen_range(0..=24);
            let mut names: Vec<String> = Vec::new();
            for i in 0..n {
                let name = format!("{}_{}", KINDS.choose(rng).unwrap(), i);
                names.push(name);
            }
            let listed: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
            let mut s = format!("[1. Appeared Characters]: [{}]\n[2. Character Details]:\n", listed.join(", "));
            for (i, n) in names.iter().enumerate() {
                s.push_str(&format!(
                    "[Visual Memory {}:] [[NAME: {n}], [DESCRIPTION: {}], [FRAME: {}]] [Visual Memory Ends]\n",
                    i + 1,
                    sentence(rng, 2),
                    rng.gen_range(-2..images + 4)
                ));
            }
            s
        }
        StageTag::DenseCaption | StageTag::CaptionModify => {
            let mut names = memory_names(req);
            names.push(fresh_name(rng));
            let used: Vec<&String> = names.iter().filter(|_| rng.gen_bool(0.5)).collect();
            let listed: Vec<String> = used.iter().map(|n| format!("\"{n}\"")).collect();
            let mut detailed = sentence(rng, 4);
            for n in &used {
                detailed.push_str(&format!(" <{n}> {}", sentence(rng, 1)));
            }
            format!(
                "[1. Brief Description]: {}\n[2. Appeared Characters]: [{}]\n[3. Detailed Description]: {detailed}",
                sentence(rng, 2),
                listed.join(", ")
            )
        }
        StageTag::CharacterMerge => {
            let names = memory_names(req);
            if names.len() < 2 {
                return "[Repeated Characters and Objects]: None".into();
            }
            let n = rng.gen_range(0..=3);
            let triples: Vec<String> = (0..n)
                .map(|_| {
                    let a = names.choose(rng).unwrap();
                    let b = names.choose(rng).unwrap();
                    let better = if rng.gen_bool(0.5) { a } else { b };
                    format!("({a}, {b}, {better})")
                })
                .collect();
            if triples.is_empty() {
                "[Repeated Characters and Objects]: None".into()
            } else {
                format!("[Repeated Characters and Objects]: {}", triples.join(", "))
            }
        }
        StageTag::SegmentIntention => format!(
            "[1. Reasoning]: {}\n[2. Relevant Segments]: {}\n[3. Confidence Level]: {}\n[4. Key Characters]: [(the man, <person_a>)]",
            sentence(rng, 3),
            intervals(rng, 6),
            rng.gen_range(1..=5)
        ),
        StageTag::GlobalIntention => format!(
            "[1. Reasoning]: {}\n[2. Relevant Segments]: {}\n[3. Key Characters]: []\n[4. Local or Global]: {}",
            sentence(rng, 3),
            intervals(rng, 25),
            if rng.gen_bool(0.5) { "Local" } else { "Global" }
        ),
        StageTag::GoalProposal => format!(
            "[1. Reasoning]: {}\n[2. Local Question]: {}?\n[3. Global Question]: {}?",
            sentence(rng, 2),
            sentence(rng, 3),
            sentence(rng, 3)
        ),
        StageTag::LocalPerception | StageTag::GlobalPerception => sentence(rng, 0),
        StageTag::Answer | StageTag::Baseline => format!(
            "[1. Reasoning]: {}\n[2. Answer]: {}",
            sentence(rng, 2),
            ['A', 'B', 'C', 'D', 'E'][rng.gen_range(0..5)]
        ),
    }
}

impl Backend for AutoBackend {
    fn complete(&self, req: &ModelRequest, _params: &GenerationParams) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let images = req.image_count();
        if req.baseline {
            self.baseline_calls.fetch_add(1, Ordering::SeqCst);
        } else {
            self.max_plain_images.fetch_max(images, Ordering::SeqCst);
            if images > 32 {
                self.oversized_unflagged.fetch_add(1, Ordering::SeqCst);
            }
        }
        if req.baseline != (req.stage == StageTag::Baseline) {
            self.flag_mismatches.fetch_add(1, Ordering::SeqCst);
        }
        let digest = request_digest(req);
        let seed = u64::from_str_radix(&digest[..16], 16).expect("digest is hex");
        let mut rng = StdRng::seed_from_u64(seed);
        if rng.gen_range(0..100) < self.garbage_pct {
            return Ok(Completion::text("I would rather not format this."));
        }
        Ok(Completion::text(reply(req, &mut rng)))
    }
}
