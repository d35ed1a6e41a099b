//! Documents exchanged with the subject runner.
//!
//! The sandbox writes a [`RunSpec`] to a private file and invokes the runner as
//! `<runner command...> <spec path> <reply path>`; the runner writes a
//! [`RunReply`] to the reply path before exiting. Field names are fixed for
//! protocol version [`PROTOCOL_VERSION`].

use serde::{Deserialize, Serialize};

use crate::model::{Level, Payload};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    CallFunction,
    RunFile,
    MaterializeOnly,
    Instrument,
    Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterializedKind {
    /// Pickled argument tuple.
    Args,
    /// Canonical JSON argument list.
    ArgsJson,
    Stdin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedRef {
    pub kind: MaterializedKind,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLimits {
    pub time_limit_s: f64,
    pub memory_limit_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionRequest {
    pub text: String,
    pub anchor: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub version: u32,
    pub mode: RunMode,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialized: Option<MaterializedRef>,
    /// Where `materialize_only` writes the concrete input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assertions: Vec<InsertionRequest>,
    pub limits: RunLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    WrongOutput,
    RuntimeError,
    AssertionError,
    Timeout,
    Oom,
    InfraError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReply {
    pub version: u32,
    pub status: RunStatus,
    #[serde(default)]
    pub return_value: Option<String>,
    #[serde(default)]
    pub stdout: Option<String>,
    #[serde(default)]
    pub stderr: Option<String>,
    #[serde(default)]
    pub input_digest: Option<String>,
    #[serde(default)]
    pub materialized: Option<MaterializedRef>,
    #[serde(default)]
    pub input_size: Option<u64>,
    #[serde(default)]
    pub coverage: Option<f64>,
    #[serde(default)]
    pub instrumented_source: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}
