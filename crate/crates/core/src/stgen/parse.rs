//! Parsing of model replies into assertions, cases and verdicts.

use regex::Regex;
use serde::Deserialize;

use super::{AssertionKind, JudgeVerdict, VerdictSubject};
use crate::llm::prompts::strip_fences;
use crate::pysrc;
use crate::sandbox::CONTRACT_SENTINEL;

/// Condition of the first `assert` statement in a reply; `None` means the
/// model offered no assertion.
pub fn assertion_condition(reply: &str) -> Result<Option<String>, String> {
    let body = strip_fences(reply);
    if body.is_empty() || body.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let lines = pysrc::logical_lines(body).map_err(|e| e.to_string())?;
    let physical: Vec<&str> = body.lines().collect();
    let Some(stmt) = lines.iter().find(|l| {
        let t = l.code.trim_start();
        t.starts_with("assert ") || t.starts_with("assert(")
    }) else {
        let first = physical.first().map(|s| s.trim()).unwrap_or_default();
        if first.eq_ignore_ascii_case("none") || first.to_ascii_lowercase().starts_with("none") {
            return Ok(None);
        }
        return Err("reply contains no assert statement".into());
    };
    let text = physical[stmt.first..=stmt.last]
        .iter()
        .map(|l| l.trim().trim_end_matches('\\').trim())
        .collect::<Vec<_>>()
        .join(" ");
    let rest = text.trim_start().strip_prefix("assert").unwrap_or_default();
    let rest = strip_inline_comment(rest);
    let (cond, _msg) = pysrc::split_assert_message(rest);
    let cond = cond.trim();
    if cond.is_empty() {
        return Err("assert statement has no condition".into());
    }
    if cond.contains(CONTRACT_SENTINEL) {
        return Err("assert statement reuses the contract tag".into());
    }
    Ok(Some(cond.to_string()))
}

fn strip_inline_comment(s: &str) -> &str {
    match pysrc::mask(s) {
        Ok(m) => match m.find('#') {
            Some(i) => s[..i].trim_end(),
            None => s,
        },
        Err(_) => s,
    }
}

pub fn assertion_kind(cond: &str) -> AssertionKind {
    let lower = cond.to_ascii_lowercase();
    if lower.contains("isinstance") || lower.contains("type(") {
        AssertionKind::Type
    } else if lower.contains("len(") || Regex::new(r"[<>]=?\s*-?\d|\d\s*[<>]=?|\*\*").unwrap().is_match(&lower) {
        AssertionKind::Scale
    } else {
        AssertionKind::Intrinsic
    }
}

/// One expression per argument, as a JSON array of strings.
pub fn expressions(reply: &str, min: usize, max: Option<usize>) -> Result<Vec<String>, String> {
    let body = strip_fences(reply);
    let start = body.find('[').ok_or("reply contains no JSON array")?;
    let end = body.rfind(']').ok_or("reply contains no JSON array")?;
    if end < start {
        return Err("reply contains no JSON array".into());
    }
    let exprs: Vec<String> =
        serde_json::from_str(&body[start..=end]).map_err(|e| format!("expression array: {e}"))?;
    if exprs.iter().any(|e| e.trim().is_empty()) {
        return Err("empty expression".into());
    }
    if exprs.len() < min || max.is_some_and(|m| exprs.len() > m) {
        let want = match max {
            Some(m) if m == min => format!("{m}"),
            Some(m) => format!("{min}..={m}"),
            None => format!("at least {min}"),
        };
        return Err(format!("expected {want} expressions, got {}", exprs.len()));
    }
    Ok(exprs)
}

/// Generator source: must define at least one top-level function.
pub fn generator(reply: &str) -> Result<String, String> {
    let body = strip_fences(reply);
    pysrc::mask(body).map_err(|e| e.to_string())?;
    let def = Regex::new(r"(?m)^def\s+\w+\s*\(").unwrap();
    if !def.is_match(body) {
        return Err("generator defines no top-level function".into());
    }
    let mut code = body.to_string();
    if !code.ends_with('\n') {
        code.push('\n');
    }
    Ok(code)
}

#[derive(Deserialize)]
struct RawVerdict {
    verdict: String,
    #[serde(default)]
    assertions: Vec<i64>,
    #[serde(default)]
    rationale: String,
}

/// A verdict must name its subject; `contract_invalid` must name valid indices.
pub fn verdict(reply: &str, assertion_count: usize) -> Result<JudgeVerdict, String> {
    let body = strip_fences(reply);
    let start = body.find('{').ok_or("reply contains no JSON object")?;
    let end = body.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    let raw: RawVerdict = serde_json::from_str(&body[start..=end]).map_err(|e| format!("verdict: {e}"))?;
    let subject = match raw.verdict.trim() {
        "contract_invalid" => VerdictSubject::ContractInvalid,
        "testcase_invalid" => VerdictSubject::TestcaseInvalid,
        other => return Err(format!("unknown verdict `{other}`")),
    };
    let mut indices = Vec::new();
    for i in raw.assertions {
        let i = usize::try_from(i).map_err(|_| format!("assertion index {i} is negative"))?;
        if i >= assertion_count {
            return Err(format!("assertion index {i} out of range (contract has {assertion_count})"));
        }
        if !indices.contains(&i) {
            indices.push(i);
        }
    }
    if subject == VerdictSubject::ContractInvalid && indices.is_empty() {
        return Err("contract_invalid verdict names no assertion".into());
    }
    if subject == VerdictSubject::TestcaseInvalid {
        indices.clear();
    }
    Ok(JudgeVerdict { subject, rationale: raw.rationale, assertions: indices })
}
