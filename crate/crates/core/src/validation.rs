//! Problem validation: drop ground truths that fail their own tests or touch
//! the filesystem, and drop problems left without a usable pair.

use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Problem, SolutionProgram};
use crate::pysrc;
use crate::sandbox::{compare_output, ExecutionRequest, ExecutionResult, Limits, Sandbox, Status};

/// Anything that can run a solution on a test.
pub trait Executor: Sync {
    fn execute(&self, req: &ExecutionRequest<'_>) -> ExecutionResult;
}

impl Executor for Sandbox {
    fn execute(&self, req: &ExecutionRequest<'_>) -> ExecutionResult {
        Sandbox::execute(self, req)
    }
}

#[derive(Debug, Error)]
#[error("executor unavailable while validating {problem_id}: {message}")]
pub struct InfraError {
    pub problem_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    TestFailure,
    FileOperation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSolution {
    pub label: String,
    pub reason: RemovalReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub problem_id: String,
    pub removed_solutions: Vec<RemovedSolution>,
    pub removed: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problems: Vec<ValidationOutcome>,
    pub removed_problems: usize,
    pub removed_solutions: usize,
}

impl ValidationReport {
    pub fn new(problems: Vec<ValidationOutcome>) -> Self {
        Self {
            removed_problems: problems.iter().filter(|o| o.removed).count(),
            removed_solutions: problems.iter().map(|o| o.removed_solutions.len()).sum(),
            problems,
        }
    }
}

fn file_op_patterns() -> &'static [Regex] {
    static P: OnceLock<Vec<Regex>> = OnceLock::new();
    P.get_or_init(|| {
        [
            // open(0) / open(1) are the standard streams.
            r"(?:^|[^.\w])(?:io\s*\.\s*|codecs\s*\.\s*)?open\s*\(\s*(?:[^0-9\s)]|[0-9]*[0-9][0-9]|[2-9])",
            r"\bos\s*\.\s*(?:remove|unlink|rmdir|removedirs|mkdir|makedirs|rename|renames|replace|chmod|chown|link|symlink|truncate|open|fdopen|system|popen|spawn\w*|exec\w*|fork|kill|listdir|scandir|walk|chdir|mkfifo|mknod|startfile)\s*\(",
            r"\bshutil\b",
            r"\bsubprocess\b",
            r"\btempfile\b",
            r"\bpathlib\b|\bPath\s*\(",
            r"\.\s*(?:write_text|write_bytes|read_text|read_bytes|unlink|mkdir|rmdir|touch|chmod|symlink_to)\s*\(",
            r"\bfrom\s+os\s+import\b.*\b(?:remove|unlink|rmdir|mkdir|makedirs|rename|system|popen|open)\b",
            r"\bglob\s*\.\s*i?glob\s*\(",
            r"\b__import__\s*\(",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static pattern"))
        .collect()
    })
}

/// Names the file/process operations a source uses, by lexical call-name match.
pub fn detect_file_operations(source: &str) -> Vec<String> {
    let masked = match pysrc::mask(source) {
        Ok(m) => m,
        // Unparseable sources are scanned raw; false positives are acceptable here.
        Err(_) => source.to_string(),
    };
    let mut found = Vec::new();
    for (n, line) in masked.lines().enumerate() {
        for p in file_op_patterns() {
            if let Some(m) = p.find(line) {
                found.push(format!(
                    "line {}: {}",
                    n + 1,
                    m.as_str().trim_start_matches(|c: char| !c.is_alphanumeric() && c != '_' && c != '.')
                ));
            }
        }
    }
    found
}

fn check_solution(
    problem: &Problem,
    gt: &SolutionProgram,
    executor: &dyn Executor,
) -> Result<Option<RemovedSolution>, InfraError> {
    let ops = detect_file_operations(&gt.source);
    if !ops.is_empty() {
        return Ok(Some(RemovedSolution {
            label: gt.label.clone(),
            reason: RemovalReason::FileOperation,
            detail: ops.join("; "),
        }));
    }
    let results: Vec<_> = problem
        .correctness_tests
        .par_iter()
        .filter(|t| t.expected_output.is_some())
        .map(|t| {
            let req = ExecutionRequest {
                program: gt,
                level: problem.level,
                entry_point: problem.entry_point.as_deref(),
                test: t,
                limits: Limits::CORRECTNESS,
            };
            (t, executor.execute(&req))
        })
        .collect();
    for (t, r) in results {
        if r.status == Status::InfraError {
            return Err(InfraError {
                problem_id: problem.id.clone(),
                message: r.stderr,
            });
        }
        let expected = t.expected_output.as_deref().unwrap_or_default();
        if !compare_output(&r, expected, problem.level) {
            let detail = if r.status == Status::Ok {
                format!("test {}: output differs from expected", t.id)
            } else {
                format!("test {}: {:?}", t.id, r.status)
            };
            return Ok(Some(RemovedSolution {
                label: gt.label.clone(),
                reason: RemovalReason::TestFailure,
                detail,
            }));
        }
    }
    Ok(None)
}

/// Validates one problem and returns the outcome plus the problem with only
/// surviving ground truths. Correctness tests are never modified.
pub fn validate_problem(
    problem: &Problem,
    executor: &dyn Executor,
) -> Result<(ValidationOutcome, Problem), InfraError> {
    let mut outcome = ValidationOutcome {
        problem_id: problem.id.clone(),
        removed_solutions: Vec::new(),
        removed: false,
        reasons: Vec::new(),
    };
    let usable_tests = problem
        .correctness_tests
        .iter()
        .filter(|t| t.expected_output.is_some())
        .count();
    if usable_tests == 0 {
        outcome.reasons.push("no correctness test carries an expected output".into());
    }
    let mut survivors = Vec::new();
    for gt in &problem.ground_truths {
        match check_solution(problem, gt, executor)? {
            Some(removed) => outcome.removed_solutions.push(removed),
            None => survivors.push(gt.clone()),
        }
    }
    if survivors.is_empty() {
        outcome.reasons.push("no valid ground truth solution remains".into());
    }
    outcome.removed = survivors.is_empty() || usable_tests == 0;
    let mut validated = problem.clone();
    validated.ground_truths = survivors;
    Ok((outcome, validated))
}
