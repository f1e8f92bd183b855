use std::sync::LazyLock;

use regex::Regex;

use super::ParseError;

static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\[\s*(\d{1,4})\s*\.\s*([A-Za-z][^\[\]\n]*?)\s*\]\s*:?").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub number: u32,
    pub title: String,
    pub body: String,
    /// Header appeared out of ascending order.
    pub out_of_order: bool,
}

/// Ordered `[k. Title]:` sections of a reply.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SectionMap {
    pub sections: Vec<Section>,
}

/// Trims whitespace and the markdown/colon debris models leave around
/// bodies.
pub(crate) fn clean_body(s: &str) -> String {
    let s = s.trim();
    let s = s.trim_start_matches(['*', ':']).trim_start();
    let s = s.trim_end_matches('*').trim_end();
    s.to_string()
}

/// Splits a reply on `[k. Title]:` headers. Text before the first header is
/// discarded. Headers may share a line with other content.
pub fn parse_sections(text: &str) -> Result<SectionMap, ParseError> {
    let headers: Vec<_> = HEADER.captures_iter(text).collect();
    if headers.is_empty() {
        return Err(ParseError::NoSections);
    }
    let mut sections = Vec::with_capacity(headers.len());
    let mut last = 0u32;
    for (i, cap) in headers.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let body_end = headers
            .get(i + 1)
            .map(|c| c.get(0).unwrap().start())
            .unwrap_or(text.len());
        let number: u32 = cap[1].parse().unwrap_or(0);
        let title = cap[2].trim().to_string();
        sections.push(Section {
            number,
            title,
            body: clean_body(&text[whole.end()..body_end]),
            out_of_order: number <= last,
        });
        last = last.max(number);
    }
    Ok(SectionMap { sections })
}

impl SectionMap {
    /// Body of section `k` whose title mentions `keyword`; falls back to any
    /// section mentioning the keyword, then to any section numbered `k`.
    pub fn get(&self, k: u32, keyword: &str) -> Option<&str> {
        let kw = keyword.to_ascii_lowercase();
        let titled = |s: &&Section| s.title.to_ascii_lowercase().contains(&kw);
        self.sections
            .iter()
            .find(|s| s.number == k && titled(s))
            .or_else(|| self.sections.iter().find(titled))
            .or_else(|| self.sections.iter().find(|s| s.number == k))
            .map(|s| s.body.as_str())
    }

    /// Warnings for headers not in `expected` (number, keyword) or out of
    /// order.
    pub fn flags(&self, expected: &[(u32, &str)]) -> Vec<String> {
        let mut out = Vec::new();
        for s in &self.sections {
            let lc = s.title.to_ascii_lowercase();
            let known = expected
                .iter()
                .any(|(k, kw)| *k == s.number && lc.contains(&kw.to_ascii_lowercase()));
            if !known {
                out.push(format!("unexpected section [{}. {}]", s.number, s.title));
            } else if s.out_of_order {
                out.push(format!("section [{}. {}] out of order", s.number, s.title));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }
}
