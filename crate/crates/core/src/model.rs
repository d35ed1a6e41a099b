//! Benchmark data model: problems, solutions and test cases.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How a solution receives its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// A single function called with arguments.
    Function,
    /// A whole script fed through standard input.
    File,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Function => "function",
            Level::File => "file",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    GroundTruth,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionProgram {
    pub label: String,
    pub origin: Origin,
    pub source: String,
}

impl SolutionProgram {
    pub fn ground_truth(label: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            origin: Origin::GroundTruth,
            source: source.into(),
        }
    }

    pub fn candidate(label: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            origin: Origin::Candidate,
            source: source.into(),
        }
    }

    /// Hex SHA-256 of the source text.
    pub fn source_hash(&self) -> String {
        sha256_hex(self.source.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFormat {
    Raw,
    Expression,
    Generator,
}

impl TestFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            TestFormat::Raw => "raw",
            TestFormat::Expression => "expression",
            TestFormat::Generator => "generator",
        }
    }
}

/// Format-dependent test input.
///
/// Raw function-level arguments use the canonical value encoding understood
/// by the runner (plain JSON plus `$tuple`, `$set`, `$dict` tags).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Args(Vec<serde_json::Value>),
    Stdin(String),
    Expressions(Vec<String>),
    Generator(String),
}

impl Payload {
    pub fn format(&self) -> TestFormat {
        match self {
            Payload::Args(_) | Payload::Stdin(_) => TestFormat::Raw,
            Payload::Expressions(_) => TestFormat::Expression,
            Payload::Generator(_) => TestFormat::Generator,
        }
    }

    /// Whether this payload can drive a solution at `level`.
    pub fn compatible_with(&self, level: Level) -> bool {
        matches!(
            (self, level),
            (Payload::Args(_) | Payload::Expressions(_), Level::Function)
                | (Payload::Stdin(_), Level::File)
                | (Payload::Generator(_), _)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub format: TestFormat,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_output: Option<String>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
}

impl TestCase {
    pub fn new(id: impl Into<String>, payload: Payload) -> Self {
        Self {
            id: id.into(),
            format: payload.format(),
            payload,
            expected_output: None,
            rng_seed: 0,
            input_digest: None,
        }
    }

    pub fn with_expected(mut self, expected: impl Into<String>) -> Self {
        self.expected_output = Some(expected.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Stable hash of the unmaterialized payload and its seed.
    pub fn payload_hash(&self) -> String {
        let text = serde_json::to_string(&(&self.payload, self.rng_seed))
            .expect("payload serializes");
        sha256_hex(text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub level: Level,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    pub ground_truths: Vec<SolutionProgram>,
    pub correctness_tests: Vec<TestCase>,
    #[serde(default)]
    pub stressful_tests: Vec<TestCase>,
}

impl Problem {
    /// Checks the structural invariants of a problem record.
    pub fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("id: must be non-empty".into());
        }
        match (self.level, &self.entry_point) {
            (Level::Function, None) => {
                return Err("entry_point: required when level is function".into())
            }
            (Level::Function, Some(e)) if e.trim().is_empty() => {
                return Err("entry_point: must be non-empty".into())
            }
            (Level::File, Some(_)) => {
                return Err("entry_point: must be absent when level is file".into())
            }
            _ => {}
        }
        if self.ground_truths.is_empty() {
            return Err("ground_truths: at least one solution required".into());
        }
        for gt in &self.ground_truths {
            if gt.source.trim().is_empty() {
                return Err(format!("ground_truths: solution {} has empty source", gt.label));
            }
        }
        if self.correctness_tests.is_empty() {
            return Err("correctness_tests: at least one test required".into());
        }
        if self.stressful_tests.len() > crate::assembly::SUITE_SIZE {
            return Err(format!(
                "stressful_tests: at most {} entries allowed",
                crate::assembly::SUITE_SIZE
            ));
        }
        for (field, tests) in [
            ("correctness_tests", &self.correctness_tests),
            ("stressful_tests", &self.stressful_tests),
        ] {
            for t in tests {
                if t.format != t.payload.format() {
                    return Err(format!(
                        "{field}: test {} declares format {} but payload is {}",
                        t.id,
                        t.format.as_str(),
                        t.payload.format().as_str()
                    ));
                }
                if !t.payload.compatible_with(self.level) {
                    return Err(format!(
                        "{field}: test {} payload is not usable at {} level",
                        t.id,
                        self.level.as_str()
                    ));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
