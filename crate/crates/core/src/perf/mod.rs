//! CPU instruction counting and the repeated-measurement protocol.
//!
//! Every measured execution is counted in user mode over the child's whole
//! process tree, minus the runner-only baseline for the solution's level.
//! Measurements are serialized through a process-wide lane so that at most one
//! measured child runs at a time.

pub mod counters;

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sha256_hex, Level, SolutionProgram, TestCase};
use crate::sandbox::{ExecutionRequest, ExecutionResult, Limits, Sandbox, Status};
pub use counters::{
    Backend, CountedRun, CounterError, InstructionCounter, PerfEventCounter, ScriptedCounter,
    ScriptedSample, ValgrindCounter,
};

/// Samples per measurement protocol.
pub const DEFAULT_RUNS: usize = 12;
/// Wall budget for one test case's full protocol, before backend scaling.
pub const CASE_BUDGET: Duration = Duration::from_secs(60);
/// Shim-only runs whose median forms the baseline.
pub const BASELINE_RUNS: usize = 10;

static LANE: Mutex<()> = Mutex::new(());

fn lane() -> MutexGuard<'static, ()> {
    LANE.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Error)]
pub enum MeterError {
    #[error(transparent)]
    Counter(#[from] CounterError),
    #[error("measurement protocol needs at least 3 runs, got {0}")]
    TooFewRuns(usize),
    #[error("baseline run failed: {0}")]
    Baseline(String),
}

/// Mean after dropping one maximal and one minimal sample.
pub fn trimmed_mean(samples: &[f64]) -> Option<f64> {
    if samples.len() < 3 {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let kept = &sorted[1..sorted.len() - 1];
    Some(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: Backend,
    pub cpu_model: String,
    pub pinned_cpu: Option<usize>,
    pub scope: String,
    pub runner_version: String,
    pub machine: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub program_label: String,
    pub test_id: String,
    pub input_digest: Option<String>,
    /// Per-run counts with the baseline already subtracted.
    pub samples_ic: Vec<i64>,
    pub samples_wall: Vec<f64>,
    pub aggregate_ic: Option<f64>,
    pub aggregate_wall: Option<f64>,
    pub baseline_ic: u64,
    pub failed: Option<String>,
    pub provenance: Provenance,
}

impl MeasurementRecord {
    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }
}

/// Result of one counted execution.
#[derive(Debug, Clone)]
pub struct Counted {
    /// Net count; `None` unless the run finished with status ok.
    pub instructions: Option<i64>,
    pub wall: f64,
    pub result: ExecutionResult,
}

pub fn cpu_model() -> String {
    fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

pub fn machine_key() -> String {
    let host = fs::read_to_string("/proc/sys/kernel/hostname").unwrap_or_default();
    sha256_hex(format!("{}|{}", host.trim(), cpu_model()).as_bytes())[..16].to_string()
}

/// Exclusive advisory lock held by a measuring process for its lifetime.
pub struct MachineLock {
    _file: fs::File,
    pub path: PathBuf,
}

/// `STRESSBENCH_LOCK`, else a fixed file in the temp directory.
pub fn default_lock_path() -> PathBuf {
    std::env::var_os("STRESSBENCH_LOCK")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("stressbench-measure.lock"))
}

/// Fails immediately if another process holds the lock.
pub fn acquire_machine_lock(path: &std::path::Path) -> std::io::Result<MachineLock> {
    use std::os::fd::AsRawFd;
    let file = fs::OpenOptions::new().create(true).truncate(false).write(true).open(path)?;
    // SAFETY: flock on a descriptor we own.
    if unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) } != 0 {
        let err = std::io::Error::last_os_error();
        return Err(if err.kind() == std::io::ErrorKind::WouldBlock {
            std::io::Error::new(
                std::io::ErrorKind::WouldBlock,
                format!("another measuring process holds {}", path.display()),
            )
        } else {
            err
        });
    }
    Ok(MachineLock { _file: file, path: path.to_path_buf() })
}

/// Picks a backend: `STRESSBENCH_COUNTER` = `perf-event` | `valgrind` | `auto`.
pub fn select_counter() -> Result<Box<dyn InstructionCounter>, CounterError> {
    let forced = std::env::var("STRESSBENCH_COUNTER").unwrap_or_else(|_| "auto".into());
    match forced.as_str() {
        "perf-event" | "perf" => Ok(Box::new(PerfEventCounter::probe()?)),
        "valgrind" => Ok(Box::new(ValgrindCounter::probe(None)?)),
        _ => match PerfEventCounter::probe() {
            Ok(c) => Ok(Box::new(c)),
            Err(perf_err) => match ValgrindCounter::probe(None) {
                Ok(c) => {
                    log::info!("{perf_err}; falling back to valgrind");
                    Ok(Box::new(c))
                }
                Err(_) => Err(perf_err),
            },
        },
    }
}

/// First CPU in this process's affinity mask.
pub fn first_allowed_cpu() -> Option<usize> {
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return None;
        }
        (0..libc::CPU_SETSIZE as usize).find(|&c| libc::CPU_ISSET(c, &set))
    }
}

pub struct Meter {
    sandbox: Arc<Sandbox>,
    counter: Box<dyn InstructionCounter>,
    pin_cpu: Option<usize>,
    baselines: Mutex<HashMap<Level, u64>>,
    cache_dir: Option<PathBuf>,
    machine: String,
    cpu: String,
}

impl Meter {
    pub fn new(sandbox: Arc<Sandbox>, counter: Box<dyn InstructionCounter>) -> Self {
        Self {
            sandbox,
            counter,
            pin_cpu: first_allowed_cpu(),
            baselines: Mutex::new(HashMap::new()),
            cache_dir: None,
            machine: machine_key(),
            cpu: cpu_model(),
        }
    }

    /// Persists baselines under `dir`, keyed by machine, runner and backend.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_pin_cpu(mut self, cpu: Option<usize>) -> Self {
        self.pin_cpu = cpu;
        self
    }

    /// Uses a known baseline instead of measuring one.
    pub fn with_fixed_baseline(self, level: Level, value: u64) -> Self {
        self.baselines.lock().unwrap().insert(level, value);
        self
    }

    pub fn sandbox(&self) -> &Arc<Sandbox> {
        &self.sandbox
    }

    pub fn backend(&self) -> Backend {
        self.counter.backend()
    }

    pub fn time_scale(&self) -> f64 {
        self.counter.time_scale()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            backend: self.counter.backend(),
            cpu_model: self.cpu.clone(),
            pinned_cpu: self.pin_cpu,
            scope: "user-mode, child process tree".into(),
            runner_version: self.sandbox.runner_version().to_string(),
            machine: self.machine.clone(),
        }
    }

    fn baseline_cache_path(&self, level: Level) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| {
            d.join(format!(
                "baseline-{}-{}-{}-{}.json",
                self.machine,
                self.sandbox.runner_version(),
                self.counter.backend().name(),
                level.as_str()
            ))
        })
    }

    /// Median of [`BASELINE_RUNS`] runner-only executions, cached.
    pub fn measure_baseline(&self, level: Level) -> Result<u64, MeterError> {
        if let Some(&b) = self.baselines.lock().unwrap().get(&level) {
            return Ok(b);
        }
        if let Some(path) = self.baseline_cache_path(level) {
            if let Some(b) = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse().ok()) {
                self.baselines.lock().unwrap().insert(level, b);
                return Ok(b);
            }
        }
        let b = self.measure_baseline_uncached(level)?;
        if let Some(path) = self.baseline_cache_path(level) {
            if let Some(dir) = path.parent() {
                let _ = fs::create_dir_all(dir);
            }
            let _ = fs::write(&path, b.to_string());
        }
        self.baselines.lock().unwrap().insert(level, b);
        Ok(b)
    }

    pub fn measure_baseline_uncached(&self, level: Level) -> Result<u64, MeterError> {
        let (program, test, entry) = Sandbox::baseline_parts(level);
        let req = ExecutionRequest {
            program: &program,
            level,
            entry_point: entry,
            test: &test,
            limits: Limits::CORRECTNESS,
        };
        let _lane = lane();
        let mut counts = Vec::with_capacity(BASELINE_RUNS);
        for _ in 0..BASELINE_RUNS {
            let run = self.counter.count(&self.sandbox, &req, self.pin_cpu)?;
            match run.instructions {
                Some(n) => counts.push(n),
                None => {
                    return Err(MeterError::Baseline(format!(
                        "{:?}: {}",
                        run.result.status,
                        run.result.stderr.trim()
                    )))
                }
            }
        }
        counts.sort_unstable();
        let mid = counts.len() / 2;
        Ok(if counts.len() % 2 == 0 {
            (counts[mid - 1] + counts[mid]) / 2
        } else {
            counts[mid]
        })
    }

    fn count_unlocked(&self, req: &ExecutionRequest<'_>, baseline: u64) -> Result<Counted, MeterError> {
        let run = self.counter.count(&self.sandbox, req, self.pin_cpu)?;
        let instructions = match run.instructions {
            Some(gross) => {
                let gross = i64::try_from(gross).map_err(|_| CounterError::Overflow)?;
                Some(gross - baseline as i64)
            }
            None => None,
        };
        Ok(Counted {
            instructions,
            wall: run.result.wall_time,
            result: run.result,
        })
    }

    /// One counted execution on the measurement lane.
    pub fn count_instructions(&self, req: &ExecutionRequest<'_>) -> Result<Counted, MeterError> {
        let baseline = self.measure_baseline(req.level)?;
        let _lane = lane();
        self.count_unlocked(req, baseline)
    }

    /// Runs the trimmed repeated-measurement protocol for one (program, test).
    pub fn measure_stable(
        &self,
        program: &SolutionProgram,
        level: Level,
        entry_point: Option<&str>,
        test: &TestCase,
        runs: usize,
        limits: Limits,
    ) -> Result<MeasurementRecord, MeterError> {
        if runs < 3 {
            return Err(MeterError::TooFewRuns(runs));
        }
        let baseline = self.measure_baseline(level)?;
        let req = ExecutionRequest {
            program,
            level,
            entry_point,
            test,
            limits,
        };
        let budget = CASE_BUDGET.mul_f64(self.counter.time_scale());
        let mut record = MeasurementRecord {
            program_label: program.label.clone(),
            test_id: test.id.clone(),
            input_digest: test.input_digest.clone(),
            samples_ic: Vec::with_capacity(runs),
            samples_wall: Vec::with_capacity(runs),
            aggregate_ic: None,
            aggregate_wall: None,
            baseline_ic: baseline,
            failed: None,
            provenance: self.provenance(),
        };
        let _lane = lane();
        let start = Instant::now();
        for i in 0..runs {
            if i > 0 && start.elapsed() > budget {
                record.failed = Some(format!(
                    "wall budget of {:?} exhausted after {i} of {runs} runs",
                    budget
                ));
                break;
            }
            let counted = self.count_unlocked(&req, baseline)?;
            if record.input_digest.is_none() {
                record.input_digest = counted.result.input_digest.clone();
            }
            match (counted.result.status, counted.instructions) {
                (Status::Ok, Some(n)) => {
                    record.samples_ic.push(n);
                    record.samples_wall.push(counted.wall);
                }
                (status, _) => {
                    record.failed = Some(format!("run {} ended with {:?}", i + 1, status));
                    break;
                }
            }
        }
        if record.failed.is_none() {
            let ic: Vec<f64> = record.samples_ic.iter().map(|&n| n as f64).collect();
            record.aggregate_ic = trimmed_mean(&ic);
            record.aggregate_wall = trimmed_mean(&record.samples_wall);
        }
        Ok(record)
    }
}
