//! Isolated execution of untrusted solutions.
//!
//! Every execution runs in a fresh child process (own session, private temp
//! directory as cwd/HOME/TMPDIR, rlimits, private network namespace when the
//! host allows it). Function-level solutions are invoked through the subject
//! runner; file-level solutions run as scripts with materialized stdin.

pub mod process;
pub mod protocol;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sha256_hex, Level, Payload, SolutionProgram, TestCase};
use crate::normalize::outputs_match;
use process::{Exit, NetworkIsolation, ProcessSpec, SpawnHook};
use protocol::{
    MaterializedKind, MaterializedRef, RunLimits, RunMode, RunReply, RunSpec, PROTOCOL_VERSION,
};
pub use protocol::RunStatus as Status;

/// Message prefix carried by every inserted contract assertion.
pub const CONTRACT_SENTINEL: &str = "STRESSBENCH-CONTRACT#";

const BUILTIN_RUNNER: &str = include_str!("../../runner/driver.py");
const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub time_limit: Duration,
    pub memory_limit: u64,
}

impl Limits {
    pub const CORRECTNESS: Limits = Limits {
        time_limit: Duration::from_secs(10),
        memory_limit: 1024 * MIB,
    };
    pub const MEASUREMENT: Limits = Limits {
        time_limit: Duration::from_secs(5),
        memory_limit: 1024 * MIB,
    };
}

#[derive(Debug, Clone, Copy)]
pub struct ExecutionRequest<'a> {
    pub program: &'a SolutionProgram,
    pub level: Level,
    pub entry_point: Option<&'a str>,
    pub test: &'a TestCase,
    pub limits: Limits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: Status,
    pub stdout: String,
    pub stderr: String,
    pub return_value: Option<String>,
    pub wall_time: f64,
    pub exit_code: Option<i32>,
    pub input_digest: Option<String>,
}

impl ExecutionResult {
    fn infra(message: impl Into<String>) -> Self {
        Self {
            status: Status::InfraError,
            stdout: String::new(),
            stderr: message.into(),
            return_value: None,
            wall_time: 0.0,
            exit_code: None,
            input_digest: None,
        }
    }

    /// The output compared against expectations at `level`.
    pub fn output(&self, level: Level) -> &str {
        match level {
            Level::Function => self.return_value.as_deref().unwrap_or(""),
            Level::File => &self.stdout,
        }
    }

    /// Id of the inserted contract assertion that failed, if any.
    pub fn failed_contract_assertion(&self) -> Option<u64> {
        if self.status != Status::AssertionError {
            return None;
        }
        contract_assertion_id(&self.stderr)
    }
}

/// Extracts the id from the last `AssertionError: STRESSBENCH-CONTRACT#<id>`.
pub fn contract_assertion_id(text: &str) -> Option<u64> {
    let needle = format!("AssertionError: {CONTRACT_SENTINEL}");
    let at = text.rfind(&needle)? + needle.len();
    let digits: String = text[at..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// True iff `result` succeeded and its output matches `expected`.
pub fn compare_output(result: &ExecutionResult, expected: &str, level: Level) -> bool {
    result.status == Status::Ok && outputs_match(result.output(level), expected, level)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Materialized {
    pub kind: MaterializedKind,
    pub path: PathBuf,
    pub digest: String,
    /// Stdin line count or canonical argument byte length.
    pub size: u64,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("materialization_error: {0}")]
    Materialization(String),
    #[error("infrastructure error: {0}")]
    Infra(String),
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub python: PathBuf,
    pub python_flags: Vec<String>,
    /// External runner command; the built-in runner is used when absent.
    pub runner_command: Option<Vec<String>>,
    pub work_root: Option<PathBuf>,
    pub stdout_cap: usize,
    pub network: NetworkIsolation,
    pub materialize_limits: Limits,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            python: PathBuf::from("python3"),
            python_flags: vec!["-S".into(), "-B".into()],
            runner_command: None,
            work_root: None,
            stdout_cap: 16 * MIB as usize,
            network: NetworkIsolation::BestEffort,
            materialize_limits: Limits {
                time_limit: Duration::from_secs(60),
                memory_limit: 2048 * MIB,
            },
        }
    }
}

impl SandboxConfig {
    /// Reads `STRESSBENCH_PYTHON` and `STRESSBENCH_RUNNER` overrides.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(p) = std::env::var("STRESSBENCH_PYTHON") {
            cfg.python = PathBuf::from(p);
        }
        if let Ok(r) = std::env::var("STRESSBENCH_RUNNER") {
            let parts: Vec<String> = r.split_whitespace().map(str::to_string).collect();
            if !parts.is_empty() {
                cfg.runner_command = Some(parts);
            }
        }
        cfg
    }
}

/// Adjustments a measurement backend applies to a launch.
pub struct Launch<'h> {
    pub hook: Option<&'h mut dyn SpawnHook>,
    pub prefix: Vec<OsString>,
    pub time_scale: f64,
    pub apply_memory_limit: bool,
    pub pin_cpu: Option<usize>,
}

impl Default for Launch<'_> {
    fn default() -> Self {
        Self {
            hook: None,
            prefix: Vec::new(),
            time_scale: 1.0,
            apply_memory_limit: true,
            pin_cpu: None,
        }
    }
}

pub struct Sandbox {
    cfg: SandboxConfig,
    root: PathBuf,
    _root_guard: Option<tempfile::TempDir>,
    runner_path: PathBuf,
    runner_version: String,
    materialized: Mutex<HashMap<String, Arc<Materialized>>>,
    counter: AtomicU64,
}

impl Sandbox {
    pub fn new(cfg: SandboxConfig) -> io::Result<Self> {
        let (root, guard) = match &cfg.work_root {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                (dir.clone(), None)
            }
            None => {
                let tmp = tempfile::Builder::new().prefix("stressbench-").tempdir()?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        fs::create_dir_all(root.join("inputs"))?;
        let runner_version = match &cfg.runner_command {
            Some(cmd) => sha256_hex(cmd.join(" ").as_bytes())[..16].to_string(),
            None => sha256_hex(BUILTIN_RUNNER.as_bytes())[..16].to_string(),
        };
        let runner_path = root.join(format!("runner-{runner_version}.py"));
        if cfg.runner_command.is_none() {
            fs::write(&runner_path, BUILTIN_RUNNER)?;
        }
        Ok(Self {
            cfg,
            root,
            _root_guard: guard,
            runner_path,
            runner_version,
            materialized: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn with_defaults() -> io::Result<Self> {
        Self::new(SandboxConfig::from_env())
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.cfg
    }

    /// Identifies the runner implementation (hash of its source or command).
    pub fn runner_version(&self) -> &str {
        &self.runner_version
    }

    pub fn python(&self) -> &Path {
        &self.cfg.python
    }

    fn env(&self, home: &Path) -> Vec<(OsString, OsString)> {
        let mut env: Vec<(OsString, OsString)> = vec![
            ("PATH".into(), "/usr/local/bin:/usr/bin:/bin".into()),
            ("PYTHONHASHSEED".into(), "0".into()),
            ("PYTHONDONTWRITEBYTECODE".into(), "1".into()),
            ("PYTHONIOENCODING".into(), "utf-8".into()),
            ("LANG".into(), "C.UTF-8".into()),
            ("LC_ALL".into(), "C.UTF-8".into()),
            ("HOME".into(), home.into()),
            ("TMPDIR".into(), home.into()),
        ];
        if let Ok(v) = std::env::var("VALGRIND_LIB") {
            env.push(("VALGRIND_LIB".into(), v.into()));
        }
        env
    }

    fn runner_argv(&self) -> Vec<OsString> {
        match &self.cfg.runner_command {
            Some(cmd) => cmd.iter().map(OsString::from).collect(),
            None => {
                let mut argv = vec![self.cfg.python.clone().into_os_string()];
                argv.extend(self.cfg.python_flags.iter().map(OsString::from));
                argv.push(self.runner_path.clone().into_os_string());
                argv
            }
        }
    }

    fn scratch_dir(&self) -> io::Result<tempfile::TempDir> {
        tempfile::Builder::new().prefix("run-").tempdir_in(&self.root)
    }

    fn next_id(&self) -> u64 {
        self.counter.fetch_add(1, Ordering::Relaxed)
    }

    /// Produces the concrete input for `test`, cached per payload and seed.
    pub fn materialize(&self, test: &TestCase, level: Level) -> Result<Arc<Materialized>, SandboxError> {
        if !test.payload.compatible_with(level) {
            return Err(SandboxError::Materialization(format!(
                "{} payload cannot drive a {}-level solution",
                test.format.as_str(),
                level.as_str()
            )));
        }
        let key = format!("{}-{}", level.as_str(), test.payload_hash());
        if let Some(hit) = self.materialized.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let n = self.next_id();
        let base = self.root.join("inputs").join(format!("{}-{n}", &key[..40.min(key.len())]));
        let infra = |e: io::Error| SandboxError::Infra(e.to_string());
        let made = match &test.payload {
            Payload::Stdin(text) => {
                let path = base.with_extension("txt");
                fs::write(&path, text).map_err(infra)?;
                Materialized {
                    kind: MaterializedKind::Stdin,
                    path,
                    digest: sha256_hex(text.as_bytes()),
                    size: text.matches('\n').count() as u64,
                }
            }
            Payload::Args(args) => {
                let path = base.with_extension("json");
                let text = serde_json::to_string(args).expect("args serialize");
                fs::write(&path, &text).map_err(infra)?;
                Materialized {
                    kind: MaterializedKind::ArgsJson,
                    path,
                    digest: sha256_hex(text.as_bytes()),
                    size: text.len() as u64,
                }
            }
            Payload::Expressions(_) | Payload::Generator(_) => {
                let out = base.with_extension(if level == Level::File { "txt" } else { "pkl" });
                self.materialize_with_runner(test, level, &out)?
            }
        };
        let made = Arc::new(made);
        Ok(self
            .materialized
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(made)
            .clone())
    }

    fn materialize_with_runner(
        &self,
        test: &TestCase,
        level: Level,
        out: &Path,
    ) -> Result<Materialized, SandboxError> {
        let scratch = self.scratch_dir().map_err(|e| SandboxError::Infra(e.to_string()))?;
        let limits = self.cfg.materialize_limits;
        let spec = RunSpec {
            version: PROTOCOL_VERSION,
            mode: RunMode::MaterializeOnly,
            level,
            source: None,
            source_path: None,
            entry_point: None,
            payload: Some(test.payload.clone()),
            rng_seed: test.rng_seed,
            materialized: None,
            output_path: Some(out.display().to_string()),
            assertions: Vec::new(),
            limits: run_limits(limits),
        };
        let (outcome, reply) = self
            .run_runner(&spec, scratch.path(), None, limits, &mut Launch::default())
            .map_err(|e| SandboxError::Infra(e.to_string()))?;
        if outcome.timed_out {
            return Err(SandboxError::Materialization(format!(
                "timed out after {:?}",
                limits.time_limit
            )));
        }
        let reply = match reply {
            Some(r) => r,
            None => {
                return Err(SandboxError::Infra(format!(
                    "runner produced no reply: {}",
                    excerpt(&String::from_utf8_lossy(&outcome.stderr))
                )))
            }
        };
        match reply.status {
            Status::Ok => {}
            Status::InfraError => {
                return Err(SandboxError::Infra(reply.error.unwrap_or_default()))
            }
            _ => {
                return Err(SandboxError::Materialization(excerpt(
                    &reply.error.unwrap_or_else(|| "unknown error".into()),
                )))
            }
        }
        let (Some(digest), Some(m)) = (reply.input_digest, reply.materialized) else {
            return Err(SandboxError::Infra("runner reply lacks digest or input path".into()));
        };
        Ok(Materialized {
            kind: m.kind,
            path: PathBuf::from(m.path),
            digest,
            size: reply.input_size.unwrap_or(0),
        })
    }

    fn run_runner(
        &self,
        spec: &RunSpec,
        dir: &Path,
        stdin: Option<PathBuf>,
        limits: Limits,
        launch: &mut Launch<'_>,
    ) -> io::Result<(process::ProcessOutcome, Option<RunReply>)> {
        let spec_path = dir.join("run-spec.json");
        let reply_path = dir.join("run-reply.json");
        fs::write(&spec_path, serde_json::to_vec(spec).expect("spec serializes"))?;
        let mut argv = launch.prefix.clone();
        argv.extend(self.runner_argv());
        argv.push(spec_path.into_os_string());
        argv.push(reply_path.clone().into_os_string());
        let outcome = self.spawn(argv, dir, stdin, limits, launch)?;
        let reply = fs::read(&reply_path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunReply>(&b).ok());
        Ok((outcome, reply))
    }

    fn spawn(
        &self,
        argv: Vec<OsString>,
        dir: &Path,
        stdin: Option<PathBuf>,
        limits: Limits,
        launch: &mut Launch<'_>,
    ) -> io::Result<process::ProcessOutcome> {
        let spec = ProcessSpec {
            argv,
            env: self.env(dir),
            cwd: dir.to_path_buf(),
            stdin,
            time_limit: limits.time_limit.mul_f64(launch.time_scale),
            memory_limit: launch.apply_memory_limit.then_some(limits.memory_limit),
            stdout_cap: self.cfg.stdout_cap,
            stderr_cap: 1 << 20,
            network: self.cfg.network,
            pin_cpu: launch.pin_cpu,
        };
        match launch.hook.as_mut() {
            Some(hook) => process::run(&spec, Some(&mut **hook)),
            None => process::run(&spec, None),
        }
    }

    pub fn execute(&self, req: &ExecutionRequest<'_>) -> ExecutionResult {
        self.execute_with(req, &mut Launch::default())
    }

    /// Executes under a measurement backend's launch adjustments.
    pub fn execute_with(&self, req: &ExecutionRequest<'_>, launch: &mut Launch<'_>) -> ExecutionResult {
        if req.limits.time_limit.is_zero() {
            return ExecutionResult::infra("time_limit must be positive");
        }
        let input = match self.materialize(req.test, req.level) {
            Ok(m) => m,
            Err(SandboxError::Materialization(msg)) => {
                let mut r = ExecutionResult::infra(format!("materialization_error: {msg}"));
                r.status = Status::RuntimeError;
                return r;
            }
            Err(SandboxError::Infra(msg)) => return ExecutionResult::infra(msg),
        };
        let scratch = match self.scratch_dir() {
            Ok(d) => d,
            Err(e) => return ExecutionResult::infra(e.to_string()),
        };
        let dir = scratch.path();
        let source_path = dir.join("solution.py");
        if let Err(e) = fs::write(&source_path, &req.program.source) {
            return ExecutionResult::infra(e.to_string());
        }
        let use_runner = req.level == Level::Function || self.cfg.runner_command.is_some();
        let stdin = (input.kind == MaterializedKind::Stdin).then(|| input.path.clone());
        let launched = if use_runner {
            let spec = RunSpec {
                version: PROTOCOL_VERSION,
                mode: match req.level {
                    Level::Function => RunMode::CallFunction,
                    Level::File => RunMode::RunFile,
                },
                level: req.level,
                source: Some(req.program.source.clone()),
                source_path: Some(source_path.display().to_string()),
                entry_point: req.entry_point.map(str::to_string),
                payload: None,
                rng_seed: req.test.rng_seed,
                materialized: Some(MaterializedRef {
                    kind: input.kind,
                    path: input.path.display().to_string(),
                }),
                output_path: None,
                assertions: Vec::new(),
                limits: run_limits(req.limits),
            };
            self.run_runner(&spec, dir, stdin, req.limits, launch)
        } else {
            let mut argv = launch.prefix.clone();
            argv.push(self.cfg.python.clone().into_os_string());
            argv.extend(self.cfg.python_flags.iter().map(OsString::from));
            argv.push(source_path.into_os_string());
            self.spawn(argv, dir, stdin, req.limits, launch).map(|o| (o, None))
        };
        let (outcome, reply) = match launched {
            Ok(x) => x,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return ExecutionResult::infra(format!("runner or interpreter missing: {e}"))
            }
            Err(e) => return ExecutionResult::infra(e.to_string()),
        };
        let mut result = classify(&outcome, reply, use_runner && req.level == Level::Function);
        result.input_digest = Some(input.digest.clone());
        result
    }

    /// Program and test whose execution performs only runner overhead.
    pub fn baseline_parts(level: Level) -> (SolutionProgram, TestCase, Option<&'static str>) {
        match level {
            Level::Function => (
                SolutionProgram::ground_truth("baseline", "def baseline():\n    return None\n"),
                TestCase::new("baseline", Payload::Args(Vec::new())),
                Some("baseline"),
            ),
            Level::File => (
                SolutionProgram::ground_truth("baseline", "pass\n"),
                TestCase::new("baseline", Payload::Stdin(String::new())),
                None,
            ),
        }
    }
}

fn run_limits(l: Limits) -> RunLimits {
    RunLimits {
        time_limit_s: l.time_limit.as_secs_f64(),
        memory_limit_bytes: l.memory_limit,
    }
}

fn excerpt(text: &str) -> String {
    const KEEP: usize = 2000;
    let t = text.trim();
    if t.len() <= KEEP {
        return t.to_string();
    }
    let mut start = t.len() - KEEP;
    while !t.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &t[start..])
}

fn classify(outcome: &process::ProcessOutcome, reply: Option<RunReply>, expects_reply: bool) -> ExecutionResult {
    let stdout = String::from_utf8_lossy(&outcome.stdout).into_owned();
    let mut stderr = String::from_utf8_lossy(&outcome.stderr).into_owned();
    let exit_code = match outcome.exit {
        Exit::Code(c) => Some(c),
        Exit::Signal(s) => Some(128 + s),
    };
    let mut return_value = None;
    let status = if outcome.timed_out {
        Status::Timeout
    } else if outcome.stdout_truncated {
        stderr.push_str("\n[stdout exceeded capture cap]");
        Status::RuntimeError
    } else if let Some(reply) = reply {
        if let Some(err) = &reply.error {
            if !stderr.contains(err.trim()) {
                stderr.push_str(err);
            }
        }
        return_value = reply.return_value;
        match reply.status {
            Status::Ok if outcome.exit != Exit::Code(0) => Status::RuntimeError,
            Status::AssertionError if contract_assertion_id(&stderr).is_none() => Status::RuntimeError,
            s => s,
        }
    } else if outcome.exit == Exit::Code(0) {
        if expects_reply {
            stderr.push_str("\n[runner exited without a reply]");
            Status::InfraError
        } else {
            Status::Ok
        }
    } else if matches!(outcome.exit, Exit::Signal(s) if s == libc::SIGXCPU) {
        Status::Timeout
    } else if stderr.contains("MemoryError") {
        Status::Oom
    } else if contract_assertion_id(&stderr).is_some() {
        Status::AssertionError
    } else {
        Status::RuntimeError
    };
    ExecutionResult {
        status,
        stdout,
        stderr,
        return_value,
        wall_time: outcome.wall.as_secs_f64(),
        exit_code,
        input_digest: None,
    }
}
