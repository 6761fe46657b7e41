//! Multiple-choice items and their JSON-Lines representation.
//!
//! One item per line:
//!
//! ```text
//! {"id": "q1", "question": "...", "options": {"A": "...", "B": "..."}, "gold": "A",
//!  "category": "...", "source": "..."}
//! ```
//!
//! Lines in the common `question` / `choices` / `answer` (integer index)
//! layout are accepted as well and converted on load.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 10;

/// Option letter for a zero-based index (`0 -> "A"`).
pub fn option_letter(index: usize) -> String {
    debug_assert!(index < 26);
    char::from(b'A' + index as u8).to_string()
}

/// Inverse of [`option_letter`]; accepts a single uppercase ASCII letter.
pub fn letter_index(letter: &str) -> Option<usize> {
    let mut chars = letter.chars();
    match (chars.next(), chars.next()) {
        (Some(c @ 'A'..='Z'), None) => Some(c as usize - 'A' as usize),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl McqItem {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn gold_index(&self) -> usize {
        letter_index(&self.gold).expect("validated item has a letter gold")
    }

    /// Checks the option-letter and gold invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(Error::invalid(format!(
                "item {}: {} options, expected {}..={}",
                self.id, n, MIN_OPTIONS, MAX_OPTIONS
            )));
        }
        // BTreeMap iterates keys sorted, so consecutive-from-A is a positional check.
        for (i, key) in self.options.keys().enumerate() {
            if *key != option_letter(i) {
                return Err(Error::invalid(format!(
                    "item {}: option letters must run A, B, C, ... (found {key:?} at position {i})",
                    self.id
                )));
            }
        }
        if !self.options.contains_key(&self.gold) {
            return Err(Error::invalid(format!(
                "item {}: gold {:?} is not an option",
                self.id, self.gold
            )));
        }
        Ok(())
    }
}

/// Rejects duplicate ids.
pub fn ensure_unique_ids(items: &[McqItem]) -> Result<()> {
    let mut seen = HashSet::with_capacity(items.len());
    for item in items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::invalid(format!("duplicate item id {:?}", item.id)));
        }
    }
    Ok(())
}

/// Converts a record in the `question` / `choices` / `answer`-index layout.
///
/// `category` is read from `category` or `subject`; the id falls back to
/// `fallback_id` when the record has none.
pub fn convert_indexed_record(record: &Value, fallback_id: &str) -> Result<McqItem> {
    let bad = |detail: &str| Error::invalid(format!("record {fallback_id}: {detail}"));
    let question = record
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing string field \"question\""))?;
    let choices = record
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing array field \"choices\""))?;
    let answer = record
        .get("answer")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("missing integer field \"answer\""))? as usize;
    if answer >= choices.len() {
        return Err(bad("answer index out of range"));
    }
    let mut options = BTreeMap::new();
    for (i, choice) in choices.iter().enumerate() {
        if i >= 26 {
            return Err(bad("too many choices"));
        }
        let text = match choice {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        options.insert(option_letter(i), text);
    }
    let id = match record.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => fallback_id.to_string(),
    };
    let text_field = |name: &str| record.get(name).and_then(Value::as_str).map(str::to_string);
    let item = McqItem {
        id,
        question: question.to_string(),
        options,
        gold: option_letter(answer),
        category: text_field("category").or_else(|| text_field("subject")),
        source: text_field("source"),
    };
    item.validate()?;
    Ok(item)
}

fn parse_line(line: &str, location: &str) -> Result<McqItem> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        location: location.to_string(),
        detail: e.to_string(),
    })?;
    let item = if value.get("options").is_some() {
        serde_json::from_value::<McqItem>(value).map_err(|e| Error::Parse {
            location: location.to_string(),
            detail: e.to_string(),
        })?
    } else if value.get("choices").is_some() {
        convert_indexed_record(&value, location).map_err(|e| Error::Parse {
            location: location.to_string(),
            detail: e.to_string(),
        })?
    } else {
        return Err(Error::Parse {
            location: location.to_string(),
            detail: "record has neither \"options\" nor \"choices\"".into(),
        });
    };
    item.validate().map_err(|e| Error::Parse {
        location: location.to_string(),
        detail: e.to_string(),
    })?;
    Ok(item)
}

/// Reads a JSON-Lines dataset. Blank lines are skipped; an empty file is an error.
pub fn read_items(path: &Path) -> Result<Vec<McqItem>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), lineno + 1);
        items.push(parse_line(&line, &location)?);
    }
    if items.is_empty() {
        return Err(Error::Parse {
            location: path.display().to_string(),
            detail: "no items".into(),
        });
    }
    ensure_unique_ids(&items)?;
    Ok(items)
}

/// Writes any serializable records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
