//! Benchmark loading, scoring and the uniform-sampling baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::HarnessConfig;
use crate::framing::sample_uniform;
use crate::gateway::{Gateway, UsageLedger};
use crate::parallel::fan_out;
use crate::structured_io::{query_with_repair, AnswerReply, Reply, TemplateError, Templates};
use crate::types::{AnswerLetter, FinalAnswer, ModelRequest, Part, Question, StageTag, TimeInterval};
use crate::video::FrameSource;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("reading benchmark {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing benchmark {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("benchmark {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("frames for the baseline are unavailable: {0}")]
    Frames(String),
}

/// Reads a JSON array of questions. Question ids must be unique.
pub fn load_benchmark(path: &Path) -> Result<Vec<Question>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let questions: Vec<Question> = serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = std::collections::BTreeSet::new();
    for q in &questions {
        if !seen.insert(q.question_id.as_str()) {
            return Err(HarnessError::Invalid {
                path: path.to_path_buf(),
                reason: format!("duplicate question id {}", q.question_id),
            });
        }
        if q.options.is_empty() || q.options.len() > AnswerLetter::ALL.len() {
            return Err(HarnessError::Invalid {
                path: path.to_path_buf(),
                reason: format!("question {} needs 1 to 5 options", q.question_id),
            });
        }
    }
    Ok(questions)
}

/// True when some predicted interval overlaps the ground truth with
/// positive length.
pub fn interval_match(predicted: &[TimeInterval], gt: &TimeInterval) -> bool {
    predicted.iter().any(|p| p.intersect(gt).is_some())
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// What a system produced for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: FinalAnswer,
    /// Intervals the system judged relevant, when it reports any.
    pub relevant: Option<Vec<TimeInterval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub question_id: String,
    pub video_id: String,
    pub category: Option<String>,
    pub predicted: Option<AnswerLetter>,
    pub gt: Option<AnswerLetter>,
    pub correct: bool,
    pub guessed: bool,
    pub interval_hit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

fn percent(t: &Tally) -> String {
    match t.ratio() {
        Some(r) => format!("{:.1}% ({}/{})", r * 100.0, t.correct, t.total),
        None => "N/A".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub accuracy: Tally,
    pub per_category: BTreeMap<String, Tally>,
    /// Over questions with a ground-truth interval and reported intervals.
    pub interval_recall: Tally,
    pub ledger: UsageLedger,
}

/// Scores predictions against ground truth. Questions without a
/// ground-truth letter are listed but not scored.
pub fn score(questions: &[Question], predictions: &[Result<Prediction, String>], ledger: UsageLedger) -> Report {
    let mut rows = Vec::with_capacity(questions.len());
    let mut accuracy = Tally::default();
    let mut per_category: BTreeMap<String, Tally> = BTreeMap::new();
    let mut interval_recall = Tally::default();
    for (q, p) in questions.iter().zip(predictions) {
        let (predicted, guessed, relevant, error) = match p {
            Ok(p) => (Some(p.answer.letter), p.answer.guessed, p.relevant.as_deref(), None),
            Err(e) => (None, false, None, Some(e.clone())),
        };
        let correct = predicted.is_some() && predicted == q.gt_answer;
        if q.gt_answer.is_some() {
            accuracy.total += 1;
            accuracy.correct += correct as usize;
            let cat = q.category.clone().unwrap_or_else(|| "-".into());
            let t = per_category.entry(cat).or_default();
            t.total += 1;
            t.correct += correct as usize;
        }
        let interval_hit = match (&q.gt_interval, relevant) {
            (Some(gt), Some(r)) => Some(interval_match(r, gt)),
            _ => None,
        };
        if let Some(hit) = interval_hit {
            interval_recall.total += 1;
            interval_recall.correct += hit as usize;
        }
        rows.push(ReportRow {
            question_id: q.question_id.clone(),
            video_id: q.video_id.clone(),
            category: q.category.clone(),
            predicted,
            gt: q.gt_answer,
            correct,
            guessed,
            interval_hit,
            error,
        });
    }
    Report {
        rows,
        accuracy,
        per_category,
        interval_recall,
        ledger,
    }
}

/// Answers every question with `answer` on up to `workers` threads and
/// scores the results in benchmark order.
pub fn evaluate<F>(questions: &[Question], workers: usize, ledger: impl FnOnce() -> UsageLedger, answer: F) -> Report
where
    F: Fn(&Question) -> Result<Prediction, String> + Sync,
{
    let predictions = fan_out(questions, workers, |_, q| answer(q));
    score(questions, &predictions, ledger())
}

impl Report {
    pub fn render(&self) -> String {
        let letter = |l: Option<AnswerLetter>| l.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        let mut out = format!(
            "{:<12} {:<16} {:<8} {:>4} {:>3} {:>3} {:>9}\n",
            "question", "video", "category", "pred", "gt", "ok", "interval"
        );
        for r in &self.rows {
            let pred = match (r.predicted, r.guessed) {
                (Some(l), true) => format!("{l}?"),
                (p, _) => letter(p),
            };
            out.push_str(&format!(
                "{:<12} {:<16} {:<8} {:>4} {:>3} {:>3} {:>9}\n",
                r.question_id,
                r.video_id,
                r.category.as_deref().unwrap_or("-"),
                pred,
                letter(r.gt),
                if r.correct { "yes" } else { "no" },
                match r.interval_hit {
                    Some(true) => "hit",
                    Some(false) => "miss",
                    None => "-",
                }
            ));
        }
        out.push('\n');
        out.push_str(&format!("accuracy: {}\n", percent(&self.accuracy)));
        for (cat, t) in &self.per_category {
            out.push_str(&format!("  {cat}: {}\n", percent(t)));
        }
        out.push_str(&format!("interval recall: {}\n", percent(&self.interval_recall)));
        let errors: Vec<&ReportRow> = self.rows.iter().filter(|r| r.error.is_some()).collect();
        for r in errors {
            out.push_str(&format!("error {}: {}\n", r.question_id, r.error.as_deref().unwrap()));
        }
        out.push('\n');
        out.push_str(&self.ledger.render_table());
        out
    }
}

// ---------------------------------------------------------------------------
// Baseline
// ---------------------------------------------------------------------------

pub fn baseline_frame_count(duration: f64, cfg: &HarnessConfig) -> usize {
    if duration > cfg.baseline_long_threshold_s {
        cfg.baseline_frames_long
    } else {
        cfg.baseline_frames_short
    }
}

/// One call over frames spread uniformly across the whole video. The only
/// request type allowed past the per-request image cap.
pub fn run_baseline(
    gateway: &Gateway,
    templates: &Templates,
    video: &dyn FrameSource,
    q: &Question,
    cfg: &HarnessConfig,
) -> Result<FinalAnswer, HarnessError> {
    let stage = StageTag::Baseline;
    let times = sample_uniform(video.duration(), baseline_frame_count(video.duration(), cfg));
    let frames = video.frames(&times).map_err(|e| HarnessError::Frames(e.to_string()))?;
    let parts: Vec<Part> = frames
        .iter()
        .flat_map(|f| [Part::text(format!("[{:.1}s]", f.timestamp)), Part::image(f.clone())])
        .collect();
    let slots = [("frames", parts.into()), ("question", q.render().into())];
    let mut req = ModelRequest::new(
        stage,
        format!("{}/{}", q.video_id, q.question_id),
        templates.render(stage, &slots)?,
    );
    req.baseline = true;
    Ok(match query_with_repair(gateway, &req, AnswerReply::parse) {
        Ok(p) => FinalAnswer {
            reasoning: p.value.reasoning,
            letter: p.value.letter,
            guessed: false,
        },
        Err(e) => {
            tracing::warn!(question = %q.question_id, "baseline guessing A: {e}");
            FinalAnswer {
                reasoning: String::new(),
                letter: AnswerLetter::A,
                guessed: true,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn q(id: &str, gt: Option<AnswerLetter>, interval: Option<TimeInterval>, cat: &str) -> Question {
        Question {
            question_id: id.into(),
            video_id: "v".into(),
            text: "?".into(),
            options: vec!["a".into(), "b".into()],
            category: Some(cat.into()),
            gt_answer: gt,
            gt_interval: interval,
        }
    }

    fn pred(l: AnswerLetter, relevant: Option<Vec<TimeInterval>>) -> Result<Prediction, String> {
        Ok(Prediction {
            answer: FinalAnswer {
                reasoning: String::new(),
                letter: l,
                guessed: false,
            },
            relevant,
        })
    }

    #[test]
    fn touching_intervals_do_not_match() {
        assert!(!interval_match(&[iv(0.0, 10.0)], &iv(10.0, 20.0)));
        assert!(interval_match(&[iv(0.0, 10.5)], &iv(10.0, 20.0)));
        assert!(!interval_match(&[], &iv(10.0, 20.0)));
    }

    #[test]
    fn scoring() {
        use AnswerLetter::*;
        let qs = vec![
            q("q1", Some(A), Some(iv(0.0, 5.0)), "X"),
            q("q2", Some(B), Some(iv(50.0, 60.0)), "X"),
            q("q3", Some(B), None, "Y"),
            q("q4", None, None, "Y"),
        ];
        let preds = vec![
            pred(A, Some(vec![iv(4.0, 8.0)])),
            pred(A, Some(vec![iv(0.0, 10.0)])),
            Err("boom".into()),
            pred(C, None),
        ];
        let r = score(&qs, &preds, UsageLedger::default());
        assert_eq!(r.accuracy, Tally { correct: 1, total: 3 });
        assert_eq!(r.per_category["X"], Tally { correct: 1, total: 2 });
        assert_eq!(r.per_category["Y"], Tally { correct: 0, total: 1 });
        assert_eq!(r.interval_recall, Tally { correct: 1, total: 2 });
        let text = r.render();
        assert!(text.contains("accuracy: 33.3% (1/3)"));
        assert!(text.contains("interval recall: 50.0% (1/2)"));
        assert!(text.contains("error q3: boom"));
    }

    #[test]
    fn recall_is_na_without_intervals() {
        let r = score(
            &[q("q1", Some(AnswerLetter::A), None, "X")],
            &[pred(AnswerLetter::A, None)],
            UsageLedger::default(),
        );
        assert!(r.render().contains("interval recall: N/A"));
    }

    #[test]
    fn baseline_frame_budget() {
        let cfg = HarnessConfig::default();
        assert_eq!(baseline_frame_count(600.0, &cfg), 128);
        assert_eq!(baseline_frame_count(601.0, &cfg), 256);
    }
}
