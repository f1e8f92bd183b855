//! Parsers for the list and scalar grammars that appear inside section
//! bodies.

use std::sync::LazyLock;

use regex::Regex;

use super::{ParseError, Parsed};
use crate::types::{AnswerLetter, Confidence, KeyCharacter, QuestionScope, TimeInterval};

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<([a-z0-9_]+)>").unwrap());
static YES_NO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());
static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-E])\b").unwrap());
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());
static SCOPE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(global|local)\b").unwrap());
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*(?:s|sec|secs|seconds)?\s*$").unwrap());

// ---------------------------------------------------------------------------
// Bracket helpers
// ---------------------------------------------------------------------------

/// Inner text of the first balanced `[...]` group, or the whole body when
/// there is none.
pub(crate) fn outer_bracket(body: &str) -> &str {
    let Some(open) = body.find('[') else {
        return body.trim();
    };
    let mut depth = 0usize;
    for (i, c) in body[open..].char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return body[open + 1..open + i].trim();
                }
            }
            _ => {}
        }
    }
    body[open + 1..].trim()
}

/// Top-level `( ... )` groups. Text between groups is ignored.
pub(crate) fn paren_groups(s: &str) -> Result<Vec<&str>, ParseError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => {
                if depth == 0 {
                    start = i + 1;
                }
                depth += 1;
            }
            ')' => {
                if depth == 0 {
                    return Err(ParseError::invalid("tuple list", "unbalanced ')'"));
                }
                depth -= 1;
                if depth == 0 {
                    out.push(&s[start..i]);
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(ParseError::invalid("tuple list", "unclosed '('"));
    }
    Ok(out)
}

/// Splits on commas that are not nested inside parentheses or brackets.
pub(crate) fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth <= 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(|c| matches!(c, '"' | '\'' | '`')).trim()
}

/// Normalizes a character name to the `[a-z0-9_]+` token alphabet.
pub fn normalize_name(raw: &str) -> Option<String> {
    let s = strip_quotes(raw).trim_matches(|c| c == '<' || c == '>');
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            'a'..='z' | '0'..='9' | '_' => out.push(c),
            'A'..='Z' => out.push(c.to_ascii_lowercase()),
            ' ' | '-' => out.push('_'),
            _ => {}
        }
    }
    let out = out.trim_matches('_').to_string();
    (!out.is_empty()).then_some(out)
}

/// `<name>` tokens in order of first appearance.
pub fn find_tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in TOKEN.captures_iter(text) {
        let name = &cap[1];
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    out
}

/// Replaces every `<name>` token via `f`, which returns the replacement
/// token body or `None` to keep the token.
pub fn map_tokens(text: &str, mut f: impl FnMut(&str) -> Option<String>) -> String {
    TOKEN
        .replace_all(text, |cap: &regex::Captures| match f(&cap[1]) {
            Some(new) => new,
            None => cap[0].to_string(),
        })
        .into_owned()
}

fn is_empty_marker(s: &str) -> bool {
    let t = s.trim().trim_end_matches('.').to_ascii_lowercase();
    t.is_empty() || t == "none" || t == "n/a" || t == "[]" || t == "empty"
}

// ---------------------------------------------------------------------------
// Scalar and list grammars
// ---------------------------------------------------------------------------

/// `[5, 9]` style integer list.
pub fn parse_frame_list(body: &str) -> Result<Vec<i64>, ParseError> {
    let inner = outer_bracket(body);
    if is_empty_marker(inner) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for tok in inner.split(',') {
        let tok = strip_quotes(tok);
        if tok.is_empty() {
            continue;
        }
        let v = tok
            .parse::<i64>()
            .map_err(|_| ParseError::invalid("frame list", format!("non-integer {tok:?}")))?;
        out.push(v);
    }
    Ok(out)
}

fn parse_seconds(s: &str) -> Option<f64> {
    let cap = NUMBER.captures(s)?;
    cap[1].parse().ok().filter(|v: &f64| v.is_finite())
}

/// `[(a, b), ...]` list of intervals. Invalid tuples are dropped with a
/// warning; unbalanced parentheses are an error.
pub fn parse_interval_list(body: &str) -> Result<Parsed<Vec<TimeInterval>>, ParseError> {
    let inner = outer_bracket(body);
    let mut parsed = Parsed::new(Vec::new());
    for group in paren_groups(inner)? {
        let fields = split_top_level(group);
        let nums: Option<Vec<f64>> = fields.iter().map(|f| parse_seconds(f)).collect();
        match nums.as_deref() {
            Some([a, b]) => match TimeInterval::new(*a, *b) {
                Ok(iv) => parsed.value.push(iv),
                Err(e) => parsed.warn(format!("dropped interval ({group}): {e}")),
            },
            _ => parsed.warn(format!("dropped malformed interval ({group})")),
        }
    }
    Ok(parsed)
}

pub type MergeTriple = (String, String, String);

/// `(a, b, better), ...` triples; `better` must be `a` or `b`.
pub fn parse_merge_tuples(body: &str) -> Result<Parsed<Vec<MergeTriple>>, ParseError> {
    let mut parsed = Parsed::new(Vec::new());
    for group in paren_groups(body)? {
        let fields = split_top_level(group);
        if fields.len() != 3 {
            return Err(ParseError::invalid(
                "merge tuples",
                format!("expected 3 names, found {} in ({group})", fields.len()),
            ));
        }
        let names: Option<Vec<String>> = fields.iter().map(|f| normalize_name(f)).collect();
        let Some(names) = names else {
            parsed.warn(format!("dropped tuple with empty name ({group})"));
            continue;
        };
        let [a, b, better]: [String; 3] = names.try_into().unwrap();
        if better != a && better != b {
            parsed.warn(format!("dropped ({a}, {b}, {better}): better is neither side"));
            continue;
        }
        if a == b {
            parsed.warn(format!("dropped self-merge ({a}, {b}, {better})"));
            continue;
        }
        parsed.value.push((a, b, better));
    }
    Ok(parsed)
}

/// First standalone yes/no word.
pub fn parse_yes_no(body: &str) -> Result<bool, ParseError> {
    YES_NO
        .captures(body)
        .map(|c| c[1].eq_ignore_ascii_case("yes"))
        .ok_or_else(|| ParseError::invalid("yes/no", format!("no yes/no in {:?}", truncate(body))))
}

/// First standalone capital letter A–E.
pub fn parse_answer_letter(body: &str) -> Result<AnswerLetter, ParseError> {
    LETTER
        .captures(body)
        .and_then(|c| c[1].chars().next())
        .and_then(AnswerLetter::from_char)
        .ok_or_else(|| ParseError::invalid("answer letter", format!("no A-E in {:?}", truncate(body))))
}

/// First integer within 1..=5; other integers before it are flagged.
pub fn parse_confidence(body: &str) -> Result<Parsed<Confidence>, ParseError> {
    let mut warnings = Vec::new();
    for m in INTEGER.find_iter(body) {
        match m.as_str().parse::<u8>().ok().and_then(|v| Confidence::new(v).ok()) {
            Some(c) => return Ok(Parsed { value: c, warnings }),
            None => warnings.push(format!("ignored out-of-range confidence {}", m.as_str())),
        }
    }
    Err(ParseError::invalid(
        "confidence",
        format!("no 1-5 integer in {:?}", truncate(body)),
    ))
}

/// `global`/`local` keywords, else yes → global, no → local.
pub fn parse_scope(body: &str) -> Result<QuestionScope, ParseError> {
    if let Some(c) = SCOPE.captures(body) {
        return Ok(if c[1].eq_ignore_ascii_case("global") {
            QuestionScope::Global
        } else {
            QuestionScope::Local
        });
    }
    parse_yes_no(body)
        .map(|yes| {
            if yes {
                QuestionScope::Global
            } else {
                QuestionScope::Local
            }
        })
        .map_err(|_| ParseError::invalid("scope", format!("no local/global in {:?}", truncate(body))))
}

/// `[(synonym, identifier), ...]`. The identifier is everything after the
/// first top-level comma.
pub fn parse_key_characters(body: &str) -> Result<Parsed<Vec<KeyCharacter>>, ParseError> {
    let inner = outer_bracket(body);
    let mut parsed = Parsed::new(Vec::new());
    for group in paren_groups(inner)? {
        let fields = split_top_level(group);
        if fields.len() < 2 {
            parsed.warn(format!("dropped key character without identifier ({group})"));
            continue;
        }
        let synonym = strip_quotes(fields[0]).to_string();
        let comma = fields[0].len();
        let identifier = strip_quotes(&group[comma + 1..]).to_string();
        if synonym.is_empty() || identifier.is_empty() {
            parsed.warn(format!("dropped empty key character ({group})"));
            continue;
        }
        parsed.value.push(KeyCharacter { synonym, identifier });
    }
    Ok(parsed)
}

/// `["a", "b"]` or `[a, <b>]` name list, normalized and deduplicated.
pub fn parse_name_list(body: &str) -> Parsed<Vec<String>> {
    let inner = outer_bracket(body);
    let mut parsed = Parsed::new(Vec::new());
    if is_empty_marker(inner) {
        return parsed;
    }
    for tok in inner.split(',') {
        match normalize_name(tok) {
            Some(n) if !parsed.value.contains(&n) => parsed.value.push(n),
            Some(_) => {}
            None if tok.trim().is_empty() => {}
            None => parsed.warn(format!("ignored name {tok:?}")),
        }
    }
    parsed
}

pub(crate) fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}
