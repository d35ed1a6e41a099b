//! Output normalization used for exact-match comparison.
//!
//! File-level outputs compare captured stdout after stripping trailing
//! whitespace from every line and dropping trailing blank lines. Function-level
//! outputs compare canonical value encodings structurally, with reals allowed
//! to differ by at most [`FLOAT_TOLERANCE`] (absolute or relative).

use serde_json::Value;

use crate::model::Level;

pub const FLOAT_TOLERANCE: f64 = 1e-6;

pub fn normalize_stdout(text: &str) -> String {
    let mut lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.trim_end_matches(['\r', ' ', '\t', '\x0b', '\x0c']))
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Re-renders a canonical value with sorted keys and compact separators.
/// Text that is not valid JSON is returned trimmed.
pub fn canonical_value_text(text: &str) -> String {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(v) => serde_json::to_string(&v).expect("value serializes"),
        Err(_) => text.trim().to_string(),
    }
}

/// Compares an actual output against an expected output at `level`.
pub fn outputs_match(actual: &str, expected: &str, level: Level) -> bool {
    match level {
        Level::File => normalize_stdout(actual) == normalize_stdout(expected),
        Level::Function => {
            match (
                serde_json::from_str::<Value>(actual.trim()),
                serde_json::from_str::<Value>(expected.trim()),
            ) {
                (Ok(a), Ok(e)) => values_match(&a, &e),
                _ => actual.trim() == expected.trim(),
            }
        }
    }
}

pub fn values_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if x.is_f64() || y.is_f64() {
                match (x.as_f64(), y.as_f64()) {
                    (Some(x), Some(y)) => floats_close(x, y),
                    _ => false,
                }
            } else {
                x == y
            }
        }
        (Value::Array(xs), Value::Array(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_match(x, y))
        }
        (Value::Object(xs), Value::Object(ys)) => {
            xs.len() == ys.len()
                && xs
                    .iter()
                    .all(|(k, x)| ys.get(k).is_some_and(|y| values_match(x, y)))
        }
        _ => a == b,
    }
}

fn floats_close(x: f64, y: f64) -> bool {
    if x == y {
        return true;
    }
    let diff = (x - y).abs();
    diff <= FLOAT_TOLERANCE || diff <= FLOAT_TOLERANCE * x.abs().max(y.abs())
}
