//! Instruction counter backends.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::path::PathBuf;
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::process::SpawnHook;
use crate::sandbox::{ExecutionRequest, ExecutionResult, Launch, Sandbox, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Kernel hardware counters via `perf_event_open(2)`.
    PerfEvent,
    /// Valgrind (cachegrind, no cache simulation) run as an external counting tool.
    Valgrind,
    /// Injected counts, for protocol tests.
    Scripted,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::PerfEvent => "perf-event",
            Backend::Valgrind => "valgrind",
            Backend::Scripted => "scripted",
        }
    }
}

#[derive(Debug, Error)]
pub enum CounterError {
    #[error("instruction counter `{backend}` unavailable: {reason} (hint: {hint})")]
    Unavailable {
        backend: &'static str,
        reason: String,
        hint: String,
    },
    #[error("instruction count overflowed")]
    Overflow,
    #[error("counter infrastructure error: {0}")]
    Infra(String),
}

/// One counted execution; `instructions` is the gross user-mode count.
#[derive(Debug, Clone)]
pub struct CountedRun {
    pub instructions: Option<u64>,
    pub result: ExecutionResult,
}

pub trait InstructionCounter: Send + Sync {
    fn backend(&self) -> Backend;

    /// Multiplier applied to wall-clock limits (emulating backends run slower).
    fn time_scale(&self) -> f64 {
        1.0
    }

    fn count(
        &self,
        sandbox: &Sandbox,
        req: &ExecutionRequest<'_>,
        pin_cpu: Option<usize>,
    ) -> Result<CountedRun, CounterError>;
}

// perf_event_attr, PERF_ATTR_SIZE_VER0 layout.
#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    kind: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
}

const PERF_TYPE_HARDWARE: u32 = 0;
const PERF_COUNT_HW_INSTRUCTIONS: u64 = 1;
const FLAG_DISABLED: u64 = 1 << 0;
const FLAG_INHERIT: u64 = 1 << 1;
const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
const FLAG_EXCLUDE_HV: u64 = 1 << 6;
const FLAG_ENABLE_ON_EXEC: u64 = 1 << 12;
const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;

fn open_instruction_counter(pid: libc::pid_t, on_exec: bool) -> io::Result<OwnedFd> {
    let mut attr = PerfEventAttr {
        kind: PERF_TYPE_HARDWARE,
        size: std::mem::size_of::<PerfEventAttr>() as u32,
        config: PERF_COUNT_HW_INSTRUCTIONS,
        flags: FLAG_DISABLED | FLAG_INHERIT | FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV,
        ..Default::default()
    };
    if on_exec {
        attr.flags |= FLAG_ENABLE_ON_EXEC;
    }
    let fd = unsafe {
        libc::syscall(
            libc::SYS_perf_event_open,
            &attr as *const PerfEventAttr,
            pid,
            -1 as libc::c_int,
            -1 as libc::c_int,
            PERF_FLAG_FD_CLOEXEC,
        )
    };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(unsafe { OwnedFd::from_raw_fd(fd as libc::c_int) })
}

fn read_counter(fd: &OwnedFd) -> io::Result<u64> {
    let mut value = 0u64;
    let n = unsafe {
        libc::read(
            fd.as_raw_fd(),
            &mut value as *mut u64 as *mut libc::c_void,
            std::mem::size_of::<u64>(),
        )
    };
    if n != std::mem::size_of::<u64>() as isize {
        return Err(io::Error::last_os_error());
    }
    Ok(value)
}

/// User-mode retired instructions of the child process tree.
pub struct PerfEventCounter;

impl PerfEventCounter {
    pub fn probe() -> Result<Self, CounterError> {
        open_instruction_counter(0, false)
            .map(|_| PerfEventCounter)
            .map_err(|e| CounterError::Unavailable {
                backend: Backend::PerfEvent.name(),
                reason: e.to_string(),
                hint: perf_hint(&e),
            })
    }
}

fn perf_hint(e: &io::Error) -> String {
    let paranoid = fs::read_to_string("/proc/sys/kernel/perf_event_paranoid")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown".into());
    match e.raw_os_error() {
        Some(libc::EACCES) | Some(libc::EPERM) => format!(
            "perf_event_paranoid is {paranoid}; lower it to 2 or below, grant CAP_PERFMON, or allow perf_event_open in the container seccomp profile; or set STRESSBENCH_COUNTER=valgrind"
        ),
        Some(libc::ENOENT) | Some(libc::EOPNOTSUPP) | Some(libc::ENODEV) => {
            "no hardware PMU is exposed (common in VMs); set STRESSBENCH_COUNTER=valgrind to use the external counting tool".into()
        }
        _ => "set STRESSBENCH_COUNTER=valgrind to use the external counting tool".into(),
    }
}

struct PerfAttach {
    fd: Option<OwnedFd>,
}

impl SpawnHook for PerfAttach {
    fn attach(&mut self, pid: libc::pid_t) -> io::Result<()> {
        self.fd = Some(open_instruction_counter(pid, true)?);
        Ok(())
    }
}

impl InstructionCounter for PerfEventCounter {
    fn backend(&self) -> Backend {
        Backend::PerfEvent
    }

    fn count(
        &self,
        sandbox: &Sandbox,
        req: &ExecutionRequest<'_>,
        pin_cpu: Option<usize>,
    ) -> Result<CountedRun, CounterError> {
        let mut hook = PerfAttach { fd: None };
        let result = {
            let mut launch = Launch {
                hook: Some(&mut hook),
                pin_cpu,
                ..Launch::default()
            };
            sandbox.execute_with(req, &mut launch)
        };
        let instructions = match (&hook.fd, result.status) {
            (Some(fd), Status::Ok) => {
                Some(read_counter(fd).map_err(|e| CounterError::Infra(e.to_string()))?)
            }
            _ => None,
        };
        Ok(CountedRun { instructions, result })
    }
}

/// Counts guest instructions under valgrind's cachegrind tool.
///
/// Valgrind only executes user-mode code, so the count excludes the kernel by
/// construction; `--trace-children=yes` extends it to the whole process tree.
pub struct ValgrindCounter {
    valgrind: PathBuf,
    time_scale: f64,
}

impl ValgrindCounter {
    pub const DEFAULT_TIME_SCALE: f64 = 40.0;

    pub fn probe(valgrind: Option<PathBuf>) -> Result<Self, CounterError> {
        let valgrind = valgrind.unwrap_or_else(|| PathBuf::from("valgrind"));
        let unavailable = |reason: String| CounterError::Unavailable {
            backend: Backend::Valgrind.name(),
            reason,
            hint: "install valgrind (cachegrind tool) or expose hardware counters to perf_event_open".into(),
        };
        let out = Command::new(&valgrind)
            .args(["--tool=cachegrind", "--cache-sim=no", "--cachegrind-out-file=/dev/null", "true"])
            .output()
            .map_err(|e| unavailable(format!("cannot run {}: {e}", valgrind.display())))?;
        if !out.status.success() {
            return Err(unavailable(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        Ok(Self {
            valgrind,
            time_scale: Self::DEFAULT_TIME_SCALE,
        })
    }

    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.time_scale = scale;
        self
    }
}

/// Sums every `I refs:` summary line in cachegrind logs.
pub(crate) fn parse_cachegrind_refs(log: &str) -> Result<Option<u64>, CounterError> {
    let mut total: Option<u64> = None;
    for line in log.lines() {
        let Some((_, rest)) = line.split_once("I   refs:") else {
            continue;
        };
        let digits: String = rest.chars().filter(char::is_ascii_digit).collect();
        let n: u64 = digits
            .parse()
            .map_err(|_| CounterError::Infra(format!("unparseable cachegrind line: {line}")))?;
        total = Some(total.unwrap_or(0).checked_add(n).ok_or(CounterError::Overflow)?);
    }
    Ok(total)
}

impl InstructionCounter for ValgrindCounter {
    fn backend(&self) -> Backend {
        Backend::Valgrind
    }

    fn time_scale(&self) -> f64 {
        self.time_scale
    }

    fn count(
        &self,
        sandbox: &Sandbox,
        req: &ExecutionRequest<'_>,
        pin_cpu: Option<usize>,
    ) -> Result<CountedRun, CounterError> {
        let logs = tempfile::Builder::new()
            .prefix("vg-")
            .tempdir()
            .map_err(|e| CounterError::Infra(e.to_string()))?;
        let mut log_arg = OsString::from("--log-file=");
        log_arg.push(logs.path().join("vg.%p.log"));
        let mut launch = Launch {
            prefix: vec![
                self.valgrind.clone().into_os_string(),
                "--tool=cachegrind".into(),
                "--cache-sim=no".into(),
                "--cachegrind-out-file=/dev/null".into(),
                "--trace-children=yes".into(),
                log_arg,
            ],
            time_scale: self.time_scale,
            apply_memory_limit: false,
            pin_cpu,
            ..Launch::default()
        };
        let result = sandbox.execute_with(req, &mut launch);
        if result.status != Status::Ok {
            return Ok(CountedRun {
                instructions: None,
                result,
            });
        }
        let mut total = 0u64;
        let mut seen = false;
        for entry in fs::read_dir(logs.path()).map_err(|e| CounterError::Infra(e.to_string()))? {
            let path = entry.map_err(|e| CounterError::Infra(e.to_string()))?.path();
            let text = fs::read_to_string(&path).map_err(|e| CounterError::Infra(e.to_string()))?;
            if let Some(n) = parse_cachegrind_refs(&text)? {
                total = total.checked_add(n).ok_or(CounterError::Overflow)?;
                seen = true;
            }
        }
        if !seen {
            return Err(CounterError::Infra("valgrind wrote no instruction summary".into()));
        }
        Ok(CountedRun {
            instructions: Some(total),
            result,
        })
    }
}

/// Scripted sample of a [`ScriptedCounter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScriptedSample {
    Count(u64),
    Timeout,
}

/// Replays injected counts without running anything.
pub struct ScriptedCounter {
    queue: Mutex<VecDeque<ScriptedSample>>,
}

impl ScriptedCounter {
    pub fn new(samples: impl IntoIterator<Item = ScriptedSample>) -> Self {
        Self {
            queue: Mutex::new(samples.into_iter().collect()),
        }
    }

    pub fn counts(counts: impl IntoIterator<Item = u64>) -> Self {
        Self::new(counts.into_iter().map(ScriptedSample::Count))
    }
}

impl InstructionCounter for ScriptedCounter {
    fn backend(&self) -> Backend {
        Backend::Scripted
    }

    fn count(
        &self,
        _sandbox: &Sandbox,
        _req: &ExecutionRequest<'_>,
        _pin_cpu: Option<usize>,
    ) -> Result<CountedRun, CounterError> {
        let next = self
            .queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| CounterError::Infra("scripted counter exhausted".into()))?;
        let (status, instructions) = match next {
            ScriptedSample::Count(n) => (Status::Ok, Some(n)),
            ScriptedSample::Timeout => (Status::Timeout, None),
        };
        Ok(CountedRun {
            instructions,
            result: ExecutionResult {
                status,
                stdout: String::new(),
                stderr: String::new(),
                return_value: None,
                wall_time: instructions.map_or(0.0, |n| n as f64 * 1e-9),
                exit_code: Some(0),
                input_digest: None,
            },
        })
    }
}
