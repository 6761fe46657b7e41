//! Verifiable rewards over tagged responses.
//!
//! A response is expected to look like
//! `<think>...</think>\n<answer>L</answer>`. Three rule-checked components
//! are computed from a single parse:
//!
//! - format: 1 iff both blocks exist, think precedes answer, and every tag
//!   occurs exactly once;
//! - accuracy: 1 iff the first answer block, trimmed and case-folded,
//!   equals the gold letter;
//! - XML count: 0.25 for each of the four tags occurring exactly once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Occurrence counts of the four tags in a raw response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub think_open: usize,
    pub think_close: usize,
    pub answer_open: usize,
    pub answer_close: usize,
}

impl TagCounts {
    pub fn as_array(&self) -> [usize; 4] {
        [
            self.think_open,
            self.think_close,
            self.answer_open,
            self.answer_close,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub has_think_block: bool,
    pub has_answer_block: bool,
    pub blocks_in_order: bool,
    pub answer_text: Option<String>,
    pub tag_counts: TagCounts,
}

/// Returns the (open, close-end) byte span of the first `open ... close` block.
fn first_block(raw: &str, open: &str, close: &str) -> Option<(usize, usize, usize)> {
    let start = raw.find(open)?;
    let body = start + open.len();
    let close_at = body + raw[body..].find(close)?;
    Some((start, close_at, close_at + close.len()))
}

/// Parses a response. Total over all strings; malformed input only clears flags.
pub fn parse_response(raw: &str) -> ParsedResponse {
    let tag_counts = TagCounts {
        think_open: raw.matches(THINK_OPEN).count(),
        think_close: raw.matches(THINK_CLOSE).count(),
        answer_open: raw.matches(ANSWER_OPEN).count(),
        answer_close: raw.matches(ANSWER_CLOSE).count(),
    };
    let think = first_block(raw, THINK_OPEN, THINK_CLOSE);
    let answer = first_block(raw, ANSWER_OPEN, ANSWER_CLOSE);
    let blocks_in_order = match (think, answer) {
        (Some((_, _, think_end)), Some((answer_start, _, _))) => think_end <= answer_start,
        _ => false,
    };
    let answer_text = answer
        .map(|(start, close_at, _)| raw[start + ANSWER_OPEN.len()..close_at].trim().to_string());
    ParsedResponse {
        has_think_block: think.is_some(),
        has_answer_block: answer.is_some(),
        blocks_in_order,
        answer_text,
        tag_counts,
    }
}

pub fn format_reward(parsed: &ParsedResponse) -> f64 {
    let single_tags = parsed.tag_counts.as_array().iter().all(|&c| c == 1);
    if parsed.has_think_block && parsed.has_answer_block && parsed.blocks_in_order && single_tags {
        1.0
    } else {
        0.0
    }
}

pub fn accuracy_reward(parsed: &ParsedResponse, gold_letter: &str) -> f64 {
    match &parsed.answer_text {
        Some(text) if text.trim().to_lowercase() == gold_letter.trim().to_lowercase() => 1.0,
        _ => 0.0,
    }
}

pub fn xml_count_reward(parsed: &ParsedResponse) -> f64 {
    parsed
        .tag_counts
        .as_array()
        .iter()
        .filter(|&&c| c == 1)
        .count() as f64
        * 0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub accuracy: f64,
    pub xml_count: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            format: 1.0,
            accuracy: 1.0,
            xml_count: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn new(format: f64, accuracy: f64, xml_count: f64) -> Result<Self> {
        let w = Self {
            format,
            accuracy,
            xml_count,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.format, self.accuracy, self.xml_count];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "reward weights must be finite and non-negative",
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid(
                "at least one reward weight must be positive",
            ));
        }
        Ok(())
    }

    /// Largest attainable total (every component at 1).
    pub fn max_total(&self) -> f64 {
        self.format + self.accuracy + self.xml_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub xml_count: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_parsed(
        parsed: &ParsedResponse,
        gold_letter: &str,
        weights: &RewardWeights,
    ) -> Self {
        let format = format_reward(parsed);
        let accuracy = accuracy_reward(parsed, gold_letter);
        let xml_count = xml_count_reward(parsed);
        Self {
            format,
            accuracy,
            xml_count,
            total: weights.format * format
                + weights.accuracy * accuracy
                + weights.xml_count * xml_count,
        }
    }
}

/// Parses `raw` once and scores it against `gold_letter`.
pub fn total_reward(raw: &str, gold_letter: &str, weights: &RewardWeights) -> RewardBreakdown {
    RewardBreakdown::from_parsed(&parse_response(raw), gold_letter, weights)
}
