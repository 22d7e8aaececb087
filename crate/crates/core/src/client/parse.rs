//! Parsers for structured backend output.
//!
//! The policy replies in a fixed tag grammar: a `<think>` block with the
//! reasoning trace followed by an `<answer>` block whose payload starts
//! with `Question:` or `Recommendation:`. The judge replies with a textual
//! analysis followed by a JSON object; the *last* well-formed object in
//! the text is taken, since the analysis precedes the scores.

use crate::dialogue::{ActionKind, DoctorAction};
use crate::reward::{Correctness, DimensionScores};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatViolation {
    #[error("response has no <answer> block")]
    MissingAnswer,
    #[error("response has no <think> block (strict mode)")]
    MissingThink,
    #[error("answer payload starts with neither Question: nor Recommendation:")]
    UnknownPrefix,
    #[error("answer payload is empty after its prefix")]
    EmptyContent,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeFormatError {
    #[error("no well-formed JSON object in judge reply")]
    NoJsonObject,
    #[error("judge object is missing field {0}")]
    MissingField(&'static str),
    #[error("judge field {field} is not an integer")]
    NotAnInteger { field: &'static str },
    #[error("judge field {field} value {value} outside [-5, 5]")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("verdict {0} is not one of 0.0, 0.5, 1.0")]
    BadVerdict(f64),
    #[error("judge reply has no verdict field")]
    MissingVerdict,
}

fn extract_block<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// ASCII case-insensitive prefix strip; the tag grammar's prefixes are ASCII.
fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    if head.eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Parse a policy reply into a [`DoctorAction`].
///
/// The first `<think>` block becomes the reasoning, the first `<answer>`
/// block the payload. A payload starting with `Question:` (case-insensitive,
/// surrounding whitespace ignored) is an inquiry; `Recommendation:` is a
/// terminal recommendation. In strict mode a missing think block is a
/// violation; otherwise the reasoning is left empty.
pub fn parse_doctor_response(text: &str, strict: bool) -> Result<DoctorAction, FormatViolation> {
    let payload = extract_block(text, "<answer>", "</answer>")
        .ok_or(FormatViolation::MissingAnswer)?
        .trim();
    let reasoning = match extract_block(text, "<think>", "</think>") {
        Some(r) => r.trim().to_string(),
        None if strict => return Err(FormatViolation::MissingThink),
        None => String::new(),
    };
    let (kind, rest) = if let Some(stripped) = strip_prefix_ci(payload, "question:") {
        (ActionKind::Inquiry, stripped)
    } else if let Some(stripped) = strip_prefix_ci(payload, "recommendation:") {
        (ActionKind::Recommendation, stripped)
    } else {
        return Err(FormatViolation::UnknownPrefix);
    };
    let content = rest.trim().to_string();
    if content.is_empty() {
        return Err(FormatViolation::EmptyContent);
    }
    Ok(DoctorAction {
        reasoning,
        kind,
        content,
    })
}

/// Canonical tag rendering of an action; `parse_doctor_response` inverts it.
pub fn render_doctor_action(action: &DoctorAction) -> String {
    let prefix = match action.kind {
        ActionKind::Inquiry => "Question",
        ActionKind::Recommendation => "Recommendation",
    };
    format!(
        "<think>{}</think><answer>{}: {}</answer>",
        action.reasoning, prefix, action.content
    )
}

/// Locate the last well-formed JSON object in free text.
fn last_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    for (idx, _) in text
        .match_indices('{')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
    {
        let mut stream =
            serde_json::Deserializer::from_str(&text[idx..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

const SCORE_FIELDS: [&str; 8] = [
    "safety",
    "reasoning",
    "accuracy",
    "completeness",
    "info_gathering",
    "faithfulness",
    "empathy",
    "humility",
];

/// Parse the judge's eight-dimension score object out of its reply.
///
/// All eight fields must be present, integer-typed, and within [-5, 5].
pub fn parse_judge_response(text: &str) -> Result<DimensionScores, JudgeFormatError> {
    let obj = last_json_object(text).ok_or(JudgeFormatError::NoJsonObject)?;
    let mut values = [0i64; 8];
    for (slot, field) in values.iter_mut().zip(SCORE_FIELDS) {
        let value = obj
            .get(field)
            .ok_or(JudgeFormatError::MissingField(field))?;
        let n = value
            .as_i64()
            .ok_or(JudgeFormatError::NotAnInteger { field })?;
        if !(-5..=5).contains(&n) {
            return Err(JudgeFormatError::OutOfRange { field, value: n });
        }
        *slot = n;
    }
    Ok(DimensionScores {
        safety: values[0] as i32,
        reasoning: values[1] as i32,
        accuracy: values[2] as i32,
        completeness: values[3] as i32,
        info_gathering: values[4] as i32,
        faithfulness: values[5] as i32,
        empathy: values[6] as i32,
        humility: values[7] as i32,
    })
}

/// Parse the terminal verdict out of the outcome judge's reply. The verdict
/// must be exactly 0.0, 0.5, or 1.0.
pub fn parse_outcome_verdict(text: &str) -> Result<Correctness, JudgeFormatError> {
    let obj = last_json_object(text).ok_or(JudgeFormatError::NoJsonObject)?;
    let value = obj
        .get("verdict")
        .ok_or(JudgeFormatError::MissingVerdict)?
        .as_f64()
        .ok_or(JudgeFormatError::MissingVerdict)?;
    if value == 0.0 {
        Ok(Correctness::Incorrect)
    } else if value == 0.5 {
        Ok(Correctness::Partial)
    } else if value == 1.0 {
        Ok(Correctness::Correct)
    } else {
        Err(JudgeFormatError::BadVerdict(value))
    }
}
