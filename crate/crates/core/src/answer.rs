//! Domain types shared by every stage: queries, canonical answers, sampled
//! responses and the cached response pools that strategies replay.
//!
//! Answers are pulled out of completions that follow the
//! `Explanation: ... / Answer: ...` response format. The last `Answer:`
//! marker in a completion wins.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numfmt;

const REL_TOLERANCE: f64 = 1e-6;
const ABS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("option letter must be one of A-E, got {0:?}")]
    InvalidLetter(char),
    #[error("numeric answer must be finite, got {0}")]
    NonFinite(f64),
    #[error("query prompt must not be empty (query {0:?})")]
    EmptyPrompt(String),
    #[error("gold answer kind does not match answer type {expected:?} (query {id:?})")]
    GoldKindMismatch { id: String, expected: AnswerType },
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("response indices must be contiguous from 0: expected {expected}, found {found}")]
    NonContiguousIndex { expected: usize, found: usize },
    #[error("response belongs to query {found:?}, pool is for {expected:?}")]
    ForeignResponse { expected: String, found: String },
}

/// The kind of answer a query expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    OptionLetter,
    Number,
}

impl AnswerType {
    /// Human-readable label used when rendering the system prompt.
    pub fn label(self) -> &'static str {
        match self {
            AnswerType::OptionLetter => "option letter",
            AnswerType::Number => "number",
        }
    }

    pub fn demo(self) -> &'static str {
        match self {
            AnswerType::OptionLetter => "A",
            AnswerType::Number => "42",
        }
    }
}

/// A normalized answer that can be compared across responses.
///
/// Letters are restricted to `A..=E`; numbers must be finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CanonicalAnswer {
    OptionLetter(char),
    Number(f64),
}

impl CanonicalAnswer {
    pub fn letter(c: char) -> Result<Self, AnswerError> {
        let upper = c.to_ascii_uppercase();
        if ('A'..='E').contains(&upper) {
            Ok(CanonicalAnswer::OptionLetter(upper))
        } else {
            Err(AnswerError::InvalidLetter(c))
        }
    }

    pub fn number(value: f64) -> Result<Self, AnswerError> {
        if value.is_finite() {
            Ok(CanonicalAnswer::Number(value))
        } else {
            Err(AnswerError::NonFinite(value))
        }
    }

    pub fn answer_type(&self) -> AnswerType {
        match self {
            CanonicalAnswer::OptionLetter(_) => AnswerType::OptionLetter,
            CanonicalAnswer::Number(_) => AnswerType::Number,
        }
    }

    /// Renders the answer the way a well-formed completion would state it.
    pub fn render(&self) -> String {
        match self {
            CanonicalAnswer::OptionLetter(c) => c.to_string(),
            CanonicalAnswer::Number(v) => format!("{v}"),
        }
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for CanonicalAnswer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CanonicalAnswer::OptionLetter(c) => serializer.collect_str(c),
            CanonicalAnswer::Number(v) => serializer.serialize_f64(numfmt::round_sig(*v)),
        }
    }
}

impl<'de> Deserialize<'de> for CanonicalAnswer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;

        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::Number(n) => {
                let v = n
                    .as_f64()
                    .ok_or_else(|| D::Error::custom("answer number out of range"))?;
                CanonicalAnswer::number(v).map_err(D::Error::custom)
            }
            serde_json::Value::String(s) => {
                let trimmed = s.trim();
                let mut chars = trimmed.chars();
                if let (Some(c), None) = (chars.next(), chars.next()) {
                    if c.is_ascii_alphabetic() {
                        return CanonicalAnswer::letter(c).map_err(D::Error::custom);
                    }
                }
                parse_number(trimmed)
                    .ok_or_else(|| D::Error::custom(format!("unparseable answer {s:?}")))
            }
            other => Err(D::Error::custom(format!(
                "answer must be a letter string or a number, got {other}"
            ))),
        }
    }
}

/// Equality used for voting and grading.
///
/// Letters compare exactly. Numbers compare with a relative tolerance of
/// 1e-6, falling back to an absolute 1e-9 near zero. Different kinds never
/// match. Not transitive for numbers at the tolerance boundary.
pub fn answers_equal(a: &CanonicalAnswer, b: &CanonicalAnswer) -> bool {
    match (a, b) {
        (CanonicalAnswer::OptionLetter(x), CanonicalAnswer::OptionLetter(y)) => x == y,
        (CanonicalAnswer::Number(x), CanonicalAnswer::Number(y)) => {
            let scale = x.abs().max(y.abs());
            (x - y).abs() <= (REL_TOLERANCE * scale).max(ABS_TOLERANCE)
        }
        _ => false,
    }
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[+\-\u{2212}]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)").expect("static regex")
    })
}

fn parse_number(s: &str) -> Option<CanonicalAnswer> {
    let m = number_regex().find(s)?;
    let cleaned: String = m
        .as_str()
        .chars()
        .filter(|c| *c != ',')
        .map(|c| if c == '\u{2212}' { '-' } else { c })
        .collect();
    let value: f64 = cleaned.parse().ok()?;
    CanonicalAnswer::number(value).ok()
}

fn parse_letter(s: &str) -> Option<CanonicalAnswer> {
    let mut rest = s.trim_start_matches(|c: char| !c.is_alphanumeric());
    let lower = rest.to_ascii_lowercase();
    if let Some(stripped) = lower.strip_prefix("option") {
        if stripped.starts_with(|c: char| !c.is_alphanumeric()) {
            rest = rest[6..].trim_start_matches(|c: char| !c.is_alphanumeric());
        }
    }
    let token: String = rest.chars().take_while(|c| c.is_alphanumeric()).collect();
    let mut chars = token.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => CanonicalAnswer::letter(c).ok(),
        _ => None,
    }
}

/// Finds the byte offset just past the last case-insensitive `Answer:` marker.
fn last_marker_end(text: &str) -> Option<usize> {
    const MARKER: &[u8] = b"answer:";
    let bytes = text.as_bytes();
    if bytes.len() < MARKER.len() {
        return None;
    }
    (0..=bytes.len() - MARKER.len())
        .rev()
        .find(|&i| bytes[i..i + MARKER.len()].eq_ignore_ascii_case(MARKER))
        .map(|i| i + MARKER.len())
}

/// Extracts the declared answer from a completion.
///
/// Only the remainder of the line after the last `Answer:` marker is
/// considered. Returns `None` when there is no marker or the remainder does
/// not parse as `answer_type`.
pub fn extract_answer(text: &str, answer_type: AnswerType) -> Option<CanonicalAnswer> {
    let start = last_marker_end(text)?;
    let line = text[start..].lines().next().unwrap_or("");
    match answer_type {
        AnswerType::OptionLetter => parse_letter(line),
        AnswerType::Number => parse_number(line),
    }
}

/// One evaluation item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub prompt: String,
    pub answer_type: AnswerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<CanonicalAnswer>,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        prompt: impl Into<String>,
        answer_type: AnswerType,
        gold: Option<CanonicalAnswer>,
    ) -> Result<Self, AnswerError> {
        let query = Query {
            id: id.into(),
            prompt: prompt.into(),
            answer_type,
            gold,
        };
        query.validate()?;
        Ok(query)
    }

    pub fn validate(&self) -> Result<(), AnswerError> {
        if self.prompt.is_empty() {
            return Err(AnswerError::EmptyPrompt(self.id.clone()));
        }
        if let Some(gold) = &self.gold {
            if gold.answer_type() != self.answer_type {
                return Err(AnswerError::GoldKindMismatch {
                    id: self.id.clone(),
                    expected: self.answer_type,
                });
            }
        }
        Ok(())
    }
}

/// One generated completion with its extracted answer and confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledResponse {
    pub query_id: String,
    pub index: usize,
    pub text: String,
    pub answer: Option<CanonicalAnswer>,
    pub temperature: f64,
    pub confidence: Option<f64>,
}

impl SampledResponse {
    pub fn validate(&self) -> Result<(), AnswerError> {
        match self.confidence {
            Some(c) if !(0.0..=1.0).contains(&c) => Err(AnswerError::ConfidenceOutOfRange(c)),
            _ => Ok(()),
        }
    }
}

/// Ordered responses for a single query, in sampling order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePool {
    query_id: String,
    responses: Vec<SampledResponse>,
}

impl ResponsePool {
    pub fn new(
        query_id: impl Into<String>,
        responses: Vec<SampledResponse>,
    ) -> Result<Self, AnswerError> {
        let query_id = query_id.into();
        for (expected, r) in responses.iter().enumerate() {
            if r.query_id != query_id {
                return Err(AnswerError::ForeignResponse {
                    expected: query_id,
                    found: r.query_id.clone(),
                });
            }
            if r.index != expected {
                return Err(AnswerError::NonContiguousIndex {
                    expected,
                    found: r.index,
                });
            }
            r.validate()?;
        }
        Ok(ResponsePool {
            query_id,
            responses,
        })
    }

    /// Builds a pool from bare (answer, confidence) pairs. Handy for tests and
    /// simulations where the completion text is irrelevant.
    pub fn from_answers(
        query_id: impl Into<String>,
        items: impl IntoIterator<Item = (Option<CanonicalAnswer>, Option<f64>)>,
    ) -> Result<Self, AnswerError> {
        let query_id = query_id.into();
        let responses = items
            .into_iter()
            .enumerate()
            .map(|(index, (answer, confidence))| SampledResponse {
                query_id: query_id.clone(),
                index,
                text: answer
                    .map(|a| format!("Answer: {a}"))
                    .unwrap_or_default(),
                answer,
                temperature: 1.0,
                confidence,
            })
            .collect();
        ResponsePool::new(query_id, responses)
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn responses(&self) -> &[SampledResponse] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Appends the next response in sampling order.
    pub fn push(&mut self, response: SampledResponse) -> Result<(), AnswerError> {
        if response.query_id != self.query_id {
            return Err(AnswerError::ForeignResponse {
                expected: self.query_id.clone(),
                found: response.query_id,
            });
        }
        if response.index != self.responses.len() {
            return Err(AnswerError::NonContiguousIndex {
                expected: self.responses.len(),
                found: response.index,
            });
        }
        response.validate()?;
        self.responses.push(response);
        Ok(())
    }
}
