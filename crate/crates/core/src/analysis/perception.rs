//! Goal questions, targeted visual perception and the final answer.

use super::intention::timed_frames;
use super::{question_unit, AnalysisContext, AnalysisError, GlobalPerceptionMode};
use crate::framing::{sample_global, sample_local};
use crate::parallel::fan_out;
use crate::store::CaptionStore;
use crate::structured_io::{query_with_repair, AnswerReply, GlobalReply, GoalReply, Reply, Slot};
use crate::types::{
    AnswerLetter, FinalAnswer, GlobalAnalysis, GoalProposal, PerceptionResult, PerceptionScope, Question,
    QuestionScope, Scene, Seconds, StageTag,
};

const NONE: &str = "None.";

fn render_global(g: &GlobalAnalysis) -> String {
    GlobalReply {
        reasoning: g.reasoning.clone(),
        relevant: g.relevant.clone(),
        key_characters: g.key_characters.clone(),
        scope: g.scope,
    }
    .render()
}

/// Appends the labelled options unless the question already carries them.
fn with_options(text: &str, q: &Question) -> String {
    let labelled = q.labeled_options().all(|(l, _)| text.contains(&format!("({l})")));
    if labelled {
        text.to_string()
    } else {
        format!("{} {}", text.trim(), q.options_inline())
    }
}

pub(crate) fn propose_goals(
    ctx: &AnalysisContext,
    q: &Question,
    global: &GlobalAnalysis,
) -> Result<GoalProposal, AnalysisError> {
    let stage = StageTag::GoalProposal;
    let uid = question_unit(q);
    let req = ctx.request(
        stage,
        uid.clone(),
        &[
            ("question", q.render().into()),
            ("analysis", render_global(global).into()),
        ],
    )?;
    Ok(match query_with_repair(ctx.gateway, &req, GoalReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            GoalProposal {
                reasoning: p.value.reasoning,
                local_question: with_options(&p.value.local_question, q),
                global_question: with_options(&p.value.global_question, q),
            }
        }
        Err(e) => {
            ctx.warn(stage, &uid, format!("asking the original question instead: {e}"));
            GoalProposal {
                reasoning: String::new(),
                local_question: q.render(),
                global_question: q.render(),
            }
        }
    })
}

fn run_global(mode: GlobalPerceptionMode, g: &GlobalAnalysis) -> bool {
    match mode {
        GlobalPerceptionMode::Always => true,
        GlobalPerceptionMode::Never => false,
        GlobalPerceptionMode::SkipOnLocal => g.scope == QuestionScope::Global,
        GlobalPerceptionMode::Auto => g.scope == QuestionScope::Global || g.relevant.len() > 1,
    }
}

fn look(
    ctx: &AnalysisContext,
    stage: StageTag,
    uid: &str,
    scope: PerceptionScope,
    query: &str,
    times: &[Seconds],
    captions: Option<String>,
) -> Result<PerceptionResult, AnalysisError> {
    let mut result = PerceptionResult {
        scope,
        query: query.to_string(),
        answer: String::new(),
        frames_used: Vec::new(),
        degraded: true,
    };
    let frames = match ctx.video.frames(times) {
        Ok(f) => f,
        Err(e) => {
            ctx.warn(stage, uid, format!("frames unavailable: {e}"));
            return Ok(result);
        }
    };
    let mut slots: Vec<(&str, Slot)> = vec![("question", query.into()), ("frames", timed_frames(&frames).into())];
    if let Some(c) = captions {
        slots.push(("captions", c.into()));
    }
    let req = ctx.request(stage, uid.to_string(), &slots)?;
    match ctx.gateway.query(&req) {
        Ok(resp) if !resp.text.trim().is_empty() => {
            result.answer = resp.text.trim().to_string();
            result.degraded = false;
        }
        Ok(_) => ctx.warn(stage, uid, "empty perception reply"),
        Err(e) => ctx.warn(stage, uid, format!("no perception result: {e}")),
    }
    result.frames_used = frames;
    Ok(result)
}

pub(crate) fn perceive(
    ctx: &AnalysisContext,
    store: &CaptionStore,
    q: &Question,
    global: &GlobalAnalysis,
    goals: &GoalProposal,
) -> Result<Vec<PerceptionResult>, AnalysisError> {
    let base = question_unit(q);
    let mut results = fan_out(&global.relevant, ctx.cfg.workers, |i, iv| {
        look(
            ctx,
            StageTag::LocalPerception,
            &format!("{base}/l{i:02}"),
            PerceptionScope::Local { interval: *iv },
            &goals.local_question,
            &sample_local(iv, ctx.sampling),
            None,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    if run_global(ctx.cfg.global_perception, global) {
        let times = sample_global(&global.relevant, ctx.sampling).expect("reduced analysis always has an interval");
        let captions = if ctx.cfg.captions_in_global {
            let lines: Vec<String> = store
                .scenes
                .iter()
                .filter(|s| global.relevant.iter().any(|iv| s.interval.overlaps(iv)))
                .map(Scene::caption_line)
                .collect();
            lines.join("\n")
        } else {
            "Not provided.".to_string()
        };
        results.push(look(
            ctx,
            StageTag::GlobalPerception,
            &base,
            PerceptionScope::Global,
            &goals.global_question,
            &times,
            Some(captions),
        )?);
    }
    Ok(results)
}

fn render_perception(results: &[PerceptionResult]) -> String {
    if results.is_empty() {
        return NONE.to_string();
    }
    results
        .iter()
        .map(|r| {
            let label = match &r.scope {
                PerceptionScope::Local { interval } => format!("Local {interval}"),
                PerceptionScope::Global => "Global".to_string(),
            };
            let answer = if r.degraded { "(no answer)" } else { r.answer.as_str() };
            format!("[{label}]: {answer}")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn final_answer(
    ctx: &AnalysisContext,
    q: &Question,
    global: &GlobalAnalysis,
    goals: &GoalProposal,
    perception: &[PerceptionResult],
) -> Result<FinalAnswer, AnalysisError> {
    let stage = StageTag::Answer;
    let uid = question_unit(q);
    let req = ctx.request(
        stage,
        uid.clone(),
        &[
            ("question", q.render().into()),
            ("analysis", render_global(global).into()),
            (
                "goals",
                format!(
                    "Local question: {}\nGlobal question: {}",
                    goals.local_question, goals.global_question
                )
                .into(),
            ),
            ("perception", render_perception(perception).into()),
        ],
    )?;
    Ok(match query_with_repair(ctx.gateway, &req, AnswerReply::parse) {
        Ok(p) => {
            ctx.diagnostics.warn_all(stage, &uid, p.warnings);
            if p.value.letter.index() >= q.options.len() {
                ctx.warn(stage, &uid, format!("answer {} has no matching option", p.value.letter));
            }
            FinalAnswer {
                reasoning: p.value.reasoning,
                letter: p.value.letter,
                guessed: false,
            }
        }
        Err(e) => {
            ctx.warn(stage, &uid, format!("guessing A: {e}"));
            FinalAnswer {
                reasoning: String::new(),
                letter: AnswerLetter::A,
                guessed: true,
            }
        }
    })
}
