use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use vmr_core::gateway::transcript::{read_jsonl, replay_ledger};
use vmr_core::gateway::{
    Backend, BackendError, Clock, Completion, Gateway, GatewayError, Lane, ModelPrice, PriceTable, RetryPolicy,
    ScriptedBackend, SimClock, TranscriptLog, TranscriptRecord,
};
use vmr_core::structured_io::{query_with_repair, AnswerReply, QueryFailure, Reply};
use vmr_core::types::{AnswerLetter, FrameRef, GenerationParams, ImageHandle, ModelRequest, Part, StageTag, Usage};

fn rec(stage: StageTag, unit: &str, response: &str) -> TranscriptRecord {
    TranscriptRecord {
        stage,
        unit: unit.into(),
        digest: None,
        model: None,
        images: 0,
        response: response.into(),
        usage: None,
    }
}

fn text_request(stage: StageTag, unit: &str) -> ModelRequest {
    ModelRequest::new(stage, unit, vec![Part::text("What is the answer?")])
}

fn image_request(stage: StageTag, unit: &str, n: usize) -> ModelRequest {
    let parts = (0..n)
        .map(|i| {
            Part::image(FrameRef {
                video_id: "v".into(),
                timestamp: i as f64,
                image: ImageHandle::inline("image/png", vec![0]),
            })
        })
        .collect();
    ModelRequest::new(stage, unit, parts)
}

fn scripted(records: Vec<TranscriptRecord>) -> Gateway {
    Gateway::single(Arc::new(ScriptedBackend::from_records(records)), "m")
}

// ---------------------------------------------------------------------------
// Contract
// ---------------------------------------------------------------------------

#[test]
fn image_cap_applies_to_everything_but_the_baseline() {
    let gw = scripted(vec![
        rec(StageTag::LocalPerception, "v/q/l00", "ok"),
        rec(StageTag::Baseline, "v/q", "[1. Reasoning]: x\n[2. Answer]: B"),
    ]);
    assert!(gw
        .query(&image_request(StageTag::LocalPerception, "v/q/l00", 32))
        .is_ok());
    let err = gw
        .query(&image_request(StageTag::LocalPerception, "v/q/l00", 33))
        .unwrap_err();
    assert!(matches!(err, GatewayError::Contract { .. }), "{err}");

    let mut baseline = image_request(StageTag::Baseline, "v/q", 256);
    baseline.baseline = true;
    assert!(gw.query(&baseline).is_ok());

    let audit = gw.audit();
    assert_eq!(audit.requests, 2);
    assert_eq!(audit.baseline_requests, 1);
    assert_eq!(audit.rejected, 1);
    assert_eq!(audit.max_images, 32);
}

#[test]
fn baseline_flag_must_match_the_stage() {
    let gw = scripted(vec![]);
    let mut flagged = text_request(StageTag::Answer, "v/q");
    flagged.baseline = true;
    assert!(matches!(gw.query(&flagged), Err(GatewayError::Contract { .. })));
    let unflagged = text_request(StageTag::Baseline, "v/q");
    assert!(matches!(gw.query(&unflagged), Err(GatewayError::Contract { .. })));
    assert!(matches!(
        gw.query(&text_request(StageTag::Answer, "")),
        Err(GatewayError::Contract { .. })
    ));
}

#[test]
fn missing_recording_is_a_replay_miss() {
    let gw = scripted(vec![]);
    let err = gw.query(&text_request(StageTag::Answer, "v/q9")).unwrap_err();
    assert!(matches!(err, GatewayError::ReplayMiss { ref unit, .. } if unit == "v/q9"));
}

// ---------------------------------------------------------------------------
// Retries
// ---------------------------------------------------------------------------

struct Flaky {
    failures: u32,
    calls: AtomicU32,
}

impl Backend for Flaky {
    fn complete(&self, _: &ModelRequest, _: &GenerationParams) -> Result<Completion, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(BackendError::Transient("503".into()))
        } else {
            Ok(Completion::text("fine"))
        }
    }
}

fn flaky_gateway(failures: u32, clock: Arc<SimClock>) -> (Gateway, Arc<Flaky>) {
    let backend = Arc::new(Flaky {
        failures,
        calls: AtomicU32::new(0),
    });
    let retry = RetryPolicy {
        max_attempts: 3,
        backoff_base_ms: 100,
        backoff_max_ms: 1_000,
    };
    let lane = || Lane::new(backend.clone(), "m").retry(retry);
    (Gateway::new(lane(), lane()).with_clock(clock), backend)
}

#[test]
fn transient_failures_back_off_then_succeed() {
    let clock = Arc::new(SimClock::default());
    let (gw, backend) = flaky_gateway(2, clock.clone());
    let resp = gw.query(&text_request(StageTag::Answer, "v/q")).unwrap();
    assert_eq!(resp.text, "fine");
    assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    assert_eq!(clock.now(), Duration::from_millis(100 + 200));
}

#[test]
fn retries_are_bounded() {
    let clock = Arc::new(SimClock::default());
    let (gw, backend) = flaky_gateway(10, clock);
    let err = gw.query(&text_request(StageTag::Answer, "v/q")).unwrap_err();
    assert!(
        matches!(
            err,
            GatewayError::Transport {
                attempts: 3,
                permanent: false,
                ..
            }
        ),
        "{err}"
    );
    assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    assert!(gw.ledger().total().calls == 0);
}

// ---------------------------------------------------------------------------
// Repair
// ---------------------------------------------------------------------------

#[test]
fn malformed_reply_is_repaired_once() {
    let gw = scripted(vec![
        rec(StageTag::Answer, "v/q1", "I think B."),
        rec(
            StageTag::Answer,
            "v/q1#repair",
            "[1. Reasoning]: the red car\n[2. Answer]: B",
        ),
    ]);
    let p = query_with_repair(&gw, &text_request(StageTag::Answer, "v/q1"), AnswerReply::parse).unwrap();
    assert_eq!(p.value.letter, AnswerLetter::B);
    assert!(p.warnings[0].starts_with("recovered after repair"));
    assert_eq!(gw.ledger().total().calls, 2);
}

#[test]
fn failed_repair_keeps_the_raw_reply() {
    let gw = scripted(vec![
        rec(StageTag::Answer, "v/q1", "no idea"),
        rec(StageTag::Answer, "v/q1#repair", "still no idea"),
    ]);
    let err = query_with_repair(&gw, &text_request(StageTag::Answer, "v/q1"), AnswerReply::parse).unwrap_err();
    assert_eq!(err.raw(), Some("no idea"));
    assert!(matches!(err, QueryFailure::Malformed { repair: None, .. }));
}

// ---------------------------------------------------------------------------
// Call log and ledger
// ---------------------------------------------------------------------------

#[test]
fn call_log_replays_to_the_same_ledger_and_costs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calls.jsonl");
    let mut recorded = rec(StageTag::Answer, "v/q1", "[1. Reasoning]: r\n[2. Answer]: C");
    recorded.usage = Some(Usage {
        calls: 1,
        input_units: 1_000,
        output_units: 50,
        cost_nanos: 0,
    });
    let prices = PriceTable(
        [(
            "m".to_string(),
            ModelPrice {
                input_per_mtok: 2.0,
                output_per_mtok: 8.0,
            },
        )]
        .into(),
    );
    let gw = scripted(vec![recorded, rec(StageTag::GoalProposal, "v/q1", "goals")])
        .with_prices(prices)
        .with_log(TranscriptLog::open(&path).unwrap());
    gw.query(&text_request(StageTag::Answer, "v/q1")).unwrap();
    gw.query(&image_request(StageTag::GoalProposal, "v/q1", 2)).unwrap();

    let ledger = gw.ledger();
    // Reported usage: 1000 * 2000 + 50 * 8000 nano-dollars.
    assert_eq!(ledger.stage(StageTag::Answer).cost_nanos, 2_400_000);
    // Estimated usage: two images at 258 units each, no text, 2 output chars.
    let goal = ledger.stage(StageTag::GoalProposal);
    assert_eq!((goal.input_units, goal.output_units), (516, 2));
    assert_eq!(goal.cost_nanos, 516 * 2_000 + 2 * 8_000);

    let records: Vec<TranscriptRecord> = read_jsonl(&path).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1].images, 2);
    assert!(records
        .iter()
        .all(|r| r.digest.is_some() && r.model.as_deref() == Some("m")));
    assert_eq!(replay_ledger(&records), ledger);

    // A recorded log can drive a later run unchanged.
    let replay = Gateway::single(Arc::new(ScriptedBackend::load(&path).unwrap()), "m");
    let again = replay.query(&text_request(StageTag::Answer, "v/q1")).unwrap();
    assert_eq!(AnswerReply::parse(&again.text).unwrap().value.letter, AnswerLetter::C);
}
