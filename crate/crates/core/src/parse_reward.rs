//! Completion parsing and the binary rule-based reward.
//!
//! A completion earns reward 1 only when it has the required span structure
//! and its answer label equals the gold label. Anything else earns 0.

use serde::{Deserialize, Serialize};

use crate::error::RewardError;
use crate::prompts::PromptMode;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Longest accepted label literal; keeps the parse inside `u32`.
const MAX_LABEL_DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    /// Verbatim `<think>` content; `None` for answer-only completions.
    pub think: Option<String>,
    /// 1-based document label.
    pub label: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatFailure {
    MissingThink,
    MissingAnswer,
    /// A tag occurs more than once.
    RepeatedSpan,
    /// Non-whitespace text outside the expected spans, or spans out of order.
    StrayText,
    /// A think span where the mode expects only an answer.
    UnexpectedThink,
    /// The answer span does not hold `[k]` with a positive decimal `k`.
    BadLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Parsed {
    WellFormed(ParsedAnswer),
    FormatFailure { reason: FormatFailure },
}

impl Parsed {
    pub fn is_well_formed(&self) -> bool {
        matches!(self, Parsed::WellFormed(_))
    }

    pub fn label(&self) -> Option<u32> {
        match self {
            Parsed::WellFormed(a) => Some(a.label),
            Parsed::FormatFailure { .. } => None,
        }
    }

    fn fail(reason: FormatFailure) -> Self {
        Parsed::FormatFailure { reason }
    }
}

fn parse_label(inner: &str) -> Option<u32> {
    let digits = inner.trim().strip_prefix('[')?.strip_suffix(']')?;
    if digits.is_empty() || digits.len() > MAX_LABEL_DIGITS || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|k| *k >= 1)
}

/// Parses `<answer>[k]</answer>` where `rest` must be exactly that span.
fn parse_answer_span(rest: &str) -> Result<u32, FormatFailure> {
    let inner = rest
        .strip_prefix(ANSWER_OPEN)
        .ok_or(FormatFailure::StrayText)?
        .strip_suffix(ANSWER_CLOSE)
        .ok_or(FormatFailure::StrayText)?;
    parse_label(inner).ok_or(FormatFailure::BadLabel)
}

/// Parses a completion against the span layout `mode` requires. Never panics;
/// every malformed input maps to a [`Parsed::FormatFailure`].
pub fn parse_completion(text: &str, mode: PromptMode) -> Parsed {
    let count = |tag: &str| text.matches(tag).count();
    let (think_open, think_close) = (count(THINK_OPEN), count(THINK_CLOSE));
    let (answer_open, answer_close) = (count(ANSWER_OPEN), count(ANSWER_CLOSE));
    if answer_open > 1 || answer_close > 1 || think_open > 1 || think_close > 1 {
        return Parsed::fail(FormatFailure::RepeatedSpan);
    }
    if answer_open == 0 || answer_close == 0 {
        return Parsed::fail(FormatFailure::MissingAnswer);
    }
    let body = text.trim();
    match mode {
        PromptMode::RankR1 => {
            if think_open == 0 || think_close == 0 {
                return Parsed::fail(FormatFailure::MissingThink);
            }
            let Some(after_open) = body.strip_prefix(THINK_OPEN) else {
                return Parsed::fail(FormatFailure::StrayText);
            };
            let Some((think, rest)) = after_open.split_once(THINK_CLOSE) else {
                return Parsed::fail(FormatFailure::StrayText);
            };
            match parse_answer_span(rest.trim_start()) {
                Ok(label) => Parsed::WellFormed(ParsedAnswer {
                    think: Some(think.to_string()),
                    label,
                }),
                Err(reason) => Parsed::fail(reason),
            }
        }
        PromptMode::SetwisePlain => {
            if think_open + think_close > 0 {
                return Parsed::fail(FormatFailure::UnexpectedThink);
            }
            match parse_answer_span(body) {
                Ok(label) => Parsed::WellFormed(ParsedAnswer { think: None, label }),
                Err(reason) => Parsed::fail(reason),
            }
        }
    }
}

/// Renders the canonical completion for `mode`; `think` is ignored in
/// answer-only mode.
pub fn render_completion(think: &str, label: u32, mode: PromptMode) -> String {
    match mode {
        PromptMode::RankR1 => format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}[{label}]{ANSWER_CLOSE}"),
        PromptMode::SetwisePlain => answer_span(label),
    }
}

/// `<answer>[label]</answer>`
pub fn answer_span(label: u32) -> String {
    format!("{ANSWER_OPEN}[{label}]{ANSWER_CLOSE}")
}

/// 1 iff the completion is well formed and its label equals `gold_label`.
/// Labels outside `1..=candidate_count` count as wrong answers.
pub fn compute_reward(parsed: &Parsed, gold_label: u32, candidate_count: u32) -> Result<u8, RewardError> {
    if gold_label == 0 || gold_label > candidate_count {
        return Err(RewardError::InvalidGold {
            gold: gold_label,
            candidate_count,
        });
    }
    Ok(match parsed {
        Parsed::WellFormed(answer) if answer.label == gold_label => 1,
        _ => 0,
    })
}
