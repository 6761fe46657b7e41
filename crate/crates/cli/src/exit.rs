//! Exit codes and the JSON error record written to stderr.

use rlvr_core::Error;
use serde_json::{json, Value};

pub const OTHER: i32 = 1;
pub const USAGE: i32 = 2;
pub const PARSE: i32 = 3;
pub const INSUFFICIENT_POOL: i32 = 4;
pub const ENDPOINT: i32 = 5;
pub const NUMERICAL: i32 = 6;
pub const MISSING_CHECKPOINT: i32 = 7;
pub const UNKNOWN_BASELINE: i32 = 8;

pub const HELP: &str = "\
Exit codes:
  0  success
  1  other failure (I/O, invalid configuration)
  2  usage or argument error
  3  parse error in a dataset, config or results file
  4  insufficient Hard or Easy items for the requested selection
  5  model endpoint failure
  6  numerical failure during training (checkpoint of the last good step is kept)
  7  checkpoint file missing
  8  baseline label not among the results

Errors are written to stderr as one JSON object: {\"error\", \"message\", \"exit_code\", ...}.";

/// Failures the CLI raises itself, with a fixed exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn missing_checkpoint(message: impl Into<String>) -> Self {
        Self {
            code: MISSING_CHECKPOINT,
            kind: "missing_checkpoint",
            message: message.into(),
        }
    }

    pub fn unknown_baseline(message: impl Into<String>) -> Self {
        Self {
            code: UNKNOWN_BASELINE,
            kind: "unknown_baseline",
            message: message.into(),
        }
    }
}

/// Exit code and stderr record for any error reaching `main`.
pub fn classify(err: &anyhow::Error) -> (i32, Value) {
    let message = format!("{err:#}");
    if let Some(cli) = err.downcast_ref::<CliError>() {
        return (
            cli.code,
            json!({"error": cli.kind, "message": message, "exit_code": cli.code}),
        );
    }
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    let (code, kind, mut extra) = match core {
        Some(Error::Parse { location, .. }) => (PARSE, "parse", json!({"location": location})),
        Some(Error::Json(_)) => (PARSE, "parse", json!({})),
        Some(Error::InsufficientPool {
            label,
            needed,
            available,
            shortfall,
        }) => (
            INSUFFICIENT_POOL,
            "insufficient_pool",
            json!({"label": label, "needed": needed, "available": available, "shortfall": shortfall}),
        ),
        Some(Error::Client(_)) => (ENDPOINT, "endpoint", json!({})),
        Some(Error::NumericalFailure { group_id, .. }) => {
            (NUMERICAL, "numerical", json!({"group_id": group_id}))
        }
        Some(Error::InvalidInput(_)) => (USAGE, "invalid_input", json!({})),
        _ => (OTHER, "other", json!({})),
    };
    let obj = extra.as_object_mut().expect("object literal");
    obj.insert("error".into(), kind.into());
    obj.insert("message".into(), message.into());
    obj.insert("exit_code".into(), code.into());
    (code, extra)
}
