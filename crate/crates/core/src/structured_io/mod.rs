//! Prompt rendering and parsing of the bracketed reply grammars.

pub mod lists;
pub mod repair;
pub mod replies;
pub mod sections;
pub mod templates;

use thiserror::Error;

pub use lists::{
    find_tokens, map_tokens, normalize_name, parse_answer_letter, parse_confidence, parse_frame_list,
    parse_interval_list, parse_key_characters, parse_merge_tuples, parse_name_list, parse_scope, parse_yes_no,
    MergeTriple,
};
pub use repair::{query_with_repair, repair_query, QueryFailure, RepairError};
pub use replies::{
    AnswerReply, CaptionReply, CharacterDetail, CharacterReply, GlobalReply, GoalReply, MergeReply, Reply,
    SegmentReply, SplitReply,
};
pub use sections::{parse_sections, Section, SectionMap};
pub use templates::{Slot, TemplateError, Templates};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no [k. Title] section headers found")]
    NoSections,
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

impl ParseError {
    pub fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        ParseError::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

/// A parsed value plus the non-fatal problems noticed along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Parsed<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    /// Takes another result's value, keeping its warnings.
    pub fn absorb<U>(&mut self, other: Parsed<U>) -> U {
        self.warnings.extend(other.warnings);
        other.value
    }

    pub fn with<U>(self, value: U) -> Parsed<U> {
        Parsed {
            value,
            warnings: self.warnings,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Parsed<U> {
        Parsed {
            value: f(self.value),
            warnings: self.warnings,
        }
    }
}
