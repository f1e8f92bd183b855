use thiserror::Error;

use super::replies::format_hint;
use super::{ParseError, Parsed};
use crate::gateway::{Gateway, GatewayError};
use crate::types::{ModelRequest, Part};

pub const REPAIR_SUFFIX: &str = "#repair";

#[derive(Debug, Error)]
pub enum QueryFailure {
    /// The first call never produced text.
    #[error(transparent)]
    Transport(Box<GatewayError>),
    /// Both the call and its repair produced unusable output. `raw` is the
    /// first response.
    #[error("unparseable reply for {unit}: {error}")]
    Malformed {
        unit: String,
        raw: String,
        error: ParseError,
        repair: Option<Box<GatewayError>>,
    },
}

impl QueryFailure {
    pub fn raw(&self) -> Option<&str> {
        match self {
            QueryFailure::Malformed { raw, .. } => Some(raw),
            QueryFailure::Transport(_) => None,
        }
    }
}

/// The original request with a format reminder appended and a distinct
/// unit id so recorded replies can be keyed separately.
pub fn repair_request(req: &ModelRequest, error: &ParseError) -> ModelRequest {
    let mut r = req.clone();
    r.unit_id = format!("{}{REPAIR_SUFFIX}", req.unit_id);
    r.parts.push(Part::text(format!(
        "Your previous reply could not be processed ({error}). Reply again and follow this output format exactly:\n{}",
        format_hint(req.stage)
    )));
    r
}

/// Re-issues `req` once with a format reminder and parses the result.
pub fn repair_query<T>(
    gateway: &Gateway,
    req: &ModelRequest,
    error: &ParseError,
    parse: impl Fn(&str) -> Result<Parsed<T>, ParseError>,
) -> Result<Parsed<T>, RepairError> {
    let resp = gateway
        .query(&repair_request(req, error))
        .map_err(RepairError::Gateway)?;
    let mut p = parse(&resp.text).map_err(RepairError::Parse)?;
    p.warnings.insert(0, format!("recovered after repair: {error}"));
    Ok(p)
}

#[derive(Debug, Error)]
pub enum RepairError {
    #[error(transparent)]
    Gateway(GatewayError),
    #[error(transparent)]
    Parse(ParseError),
}

/// One call plus at most one repair.
pub fn query_with_repair<T>(
    gateway: &Gateway,
    req: &ModelRequest,
    parse: impl Fn(&str) -> Result<Parsed<T>, ParseError>,
) -> Result<Parsed<T>, QueryFailure> {
    let resp = gateway.query(req).map_err(|e| QueryFailure::Transport(Box::new(e)))?;
    let error = match parse(&resp.text) {
        Ok(p) => return Ok(p),
        Err(e) => e,
    };
    match repair_query(gateway, req, &error, &parse) {
        Ok(p) => Ok(p),
        Err(RepairError::Gateway(g)) => Err(QueryFailure::Malformed {
            unit: req.unit_id.clone(),
            raw: resp.text,
            error,
            repair: Some(Box::new(g)),
        }),
        Err(RepairError::Parse(e)) => Err(QueryFailure::Malformed {
            unit: req.unit_id.clone(),
            raw: resp.text,
            error: e,
            repair: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, TranscriptRecord};
    use crate::structured_io::replies::{AnswerReply, Reply};
    use crate::types::{AnswerLetter, StageTag};
    use std::sync::Arc;

    fn rec(unit: &str, text: &str) -> TranscriptRecord {
        TranscriptRecord {
            stage: StageTag::Answer,
            unit: unit.into(),
            digest: None,
            model: None,
            images: 0,
            response: text.into(),
            usage: None,
        }
    }

    fn gateway(records: Vec<TranscriptRecord>) -> Gateway {
        Gateway::single(Arc::new(ScriptedBackend::from_records(records)), "m")
    }

    #[test]
    fn repaired_reply_parses_and_costs_two_calls() {
        let gw = gateway(vec![rec("v/q", "I think B"), rec("v/q#repair", "[2. Answer]: B")]);
        let req = ModelRequest::new(StageTag::Answer, "v/q", vec![Part::text("question")]);
        let p = query_with_repair(&gw, &req, AnswerReply::parse).unwrap();
        assert_eq!(p.value.letter, AnswerLetter::B);
        assert_eq!(gw.ledger().total().calls, 2);
    }

    #[test]
    fn missing_repair_record_is_replay_miss() {
        let gw = gateway(vec![rec("v/q", "no idea")]);
        let req = ModelRequest::new(StageTag::Answer, "v/q", vec![Part::text("question")]);
        match query_with_repair(&gw, &req, AnswerReply::parse) {
            Err(QueryFailure::Malformed {
                raw, repair: Some(g), ..
            }) => {
                assert_eq!(raw, "no idea");
                assert!(matches!(*g, GatewayError::ReplayMiss { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = repair_query(&gw, &req, &ParseError::NoSections, AnswerReply::parse).unwrap_err();
        assert!(matches!(err, RepairError::Gateway(GatewayError::ReplayMiss { .. })));
    }

    #[test]
    fn good_first_reply_makes_one_call() {
        let gw = gateway(vec![rec("v/q", "[2. Answer]: C")]);
        let req = ModelRequest::new(StageTag::Answer, "v/q", vec![]);
        query_with_repair(&gw, &req, AnswerReply::parse).unwrap();
        assert_eq!(gw.ledger().total().calls, 1);
    }

    #[test]
    fn repair_request_carries_reminder() {
        let req = ModelRequest::new(StageTag::Answer, "v/q", vec![Part::text("question")]);
        let r = repair_request(&req, &ParseError::NoSections);
        assert_eq!(r.unit_id, "v/q#repair");
        assert!(r.joined_text().contains("[2. Answer]:"));
    }
}
