//! Scoring candidate solutions: correctness, stressful output match, and
//! instruction-count comparison against the best ground truth.
//!
//! Every executed (program, test) pair is appended to a ledger under the
//! output directory; measurement records are cached by content. A later
//! [`Evaluator::resume`] skips pairs the ledger already holds.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, Distinguishability, MetricError, SampleOutcome};
use crate::model::{sha256_hex, Problem, SolutionProgram, TestCase};
use crate::perf::{MeasurementRecord, Meter, MeterError, Provenance, DEFAULT_RUNS};
use crate::sandbox::{compare_output, ExecutionRequest, Limits, Status};
use crate::validation::Executor;

/// Source of stable per-test measurements.
pub trait Measurer: Sync {
    fn measure(
        &self,
        problem: &Problem,
        program: &SolutionProgram,
        test: &TestCase,
        runs: usize,
        limits: Limits,
    ) -> Result<MeasurementRecord, MeterError>;

    fn provenance(&self) -> Provenance;
}

impl Measurer for Meter {
    fn measure(
        &self,
        problem: &Problem,
        program: &SolutionProgram,
        test: &TestCase,
        runs: usize,
        limits: Limits,
    ) -> Result<MeasurementRecord, MeterError> {
        self.measure_stable(program, problem.level, problem.entry_point.as_deref(), test, runs, limits)
    }

    fn provenance(&self) -> Provenance {
        Meter::provenance(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<u64>,
    pub runs: usize,
    pub correctness_limits: Limits,
    pub stressful_limits: Limits,
    /// Stamped into the report; evaluation itself draws no randomness.
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1],
            runs: DEFAULT_RUNS,
            correctness_limits: Limits::CORRECTNESS,
            stressful_limits: Limits::MEASUREMENT,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationJob {
    pub problems: Vec<Problem>,
    pub candidates: BTreeMap<String, Vec<SolutionProgram>>,
    pub config: EvalConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateEntry {
    Source(String),
    Labelled { label: String, source: String },
}

/// Reads `{problem_id: [source | {label, source}, ...]}`.
pub fn parse_candidates(text: &str) -> Result<BTreeMap<String, Vec<SolutionProgram>>, String> {
    let raw: BTreeMap<String, Vec<CandidateEntry>> =
        serde_json::from_str(text).map_err(|e| format!("candidates: {e}"))?;
    Ok(raw
        .into_iter()
        .map(|(pid, entries)| {
            let programs = entries
                .into_iter()
                .enumerate()
                .map(|(i, e)| match e {
                    CandidateEntry::Source(s) => SolutionProgram::candidate(format!("{pid}/{i}"), s),
                    CandidateEntry::Labelled { label, source } => SolutionProgram::candidate(label, source),
                })
                .collect();
            (pid, programs)
        })
        .collect())
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no candidate solutions supplied")]
    NoCandidates,
    #[error("candidates reference unknown problems: {}", .0.join(", "))]
    UnknownProblems(Vec<String>),
    #[error("problem {problem_id}: {source}")]
    Metric { problem_id: String, source: MetricError },
    #[error("stored run used configuration {stored}, current is {current}; refusing to resume without override")]
    ConfigMismatch { stored: String, current: String },
    #[error("execution infrastructure failed on {problem_id}/{program}: {message}")]
    Infra { problem_id: String, program: String, message: String },
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error("stopped after {0} executed pairs")]
    Aborted(usize),
    #[error("state directory: {0}")]
    Io(#[from] io::Error),
    #[error("state directory: {0}")]
    State(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    /// Correct and strictly cheaper than the best ground truth.
    Efficient,
    Correct,
    CorrectnessFailure,
    StressfulMismatch,
    StressfulTimeout,
    MeasurementFailure,
}

impl CandidateStatus {
    pub fn is_correct(self) -> bool {
        matches!(self, Self::Efficient | Self::Correct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub problem_id: String,
    pub label: String,
    pub source_hash: String,
    pub status: CandidateStatus,
    pub reason: Option<String>,
    /// Summed aggregate count over the stressful suite.
    pub summed_ic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub problem_id: String,
    pub n: u64,
    pub c: u64,
    /// `None` when the problem takes no part in efficiency metrics.
    pub c_f: Option<u64>,
    pub pass_at_k: BTreeMap<u64, f64>,
    pub efficient_at_k: BTreeMap<u64, f64>,
    pub best_ground_truth: Option<String>,
    pub best_ground_truth_ic: Option<f64>,
    /// Best ground truth over the fastest correct candidate.
    pub speedup: Option<f64>,
    pub mean_speedup_over_correct: Option<f64>,
    pub efficiency_excluded: Option<String>,
    pub candidates: Vec<CandidateOutcome>,
}

impl ProblemReport {
    pub fn sample_outcome(&self) -> SampleOutcome {
        SampleOutcome {
            problem_id: self.problem_id.clone(),
            n: self.n,
            c: self.c,
            c_f: self.c_f.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub measurement: Provenance,
    pub config_hash: String,
    pub runs: usize,
    pub seed: u64,
    /// Problems left out of efficient@k and speedup, with the reason.
    pub efficiency_excluded: BTreeMap<String, String>,
    /// Benchmark problems with no candidates.
    pub not_evaluated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub problems: Vec<ProblemReport>,
    pub pass_at_k: BTreeMap<u64, f64>,
    pub efficient_at_k: BTreeMap<u64, f64>,
    pub mean_speedup: Option<f64>,
    pub distinguishability: Distinguishability,
    pub provenance: ReportProvenance,
}

impl MetricReport {
    pub fn problem(&self, id: &str) -> Option<&ProblemReport> {
        self.problems.iter().find(|p| p.problem_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PairKind {
    Correctness,
    StressfulOutput,
    Measurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
enum PairOutcome {
    Passed,
    Failed { status: Status, reason: String },
    Measured { record: Box<MeasurementRecord> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerEntry {
    key: String,
    kind: PairKind,
    problem_id: String,
    program: String,
    test_id: String,
    #[serde(flatten)]
    outcome: PairOutcome,
}

#[derive(Debug, Serialize, Deserialize)]
struct State {
    config_hash: String,
    machine: String,
}

const STATE_FILE: &str = "state.json";
const LEDGER_FILE: &str = "ledger.jsonl";
const CACHE_DIR: &str = "measurements";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Persistent pair store; in memory only when no directory is given.
struct Store {
    dir: Option<PathBuf>,
    ledger: Mutex<Option<File>>,
    done: Mutex<HashMap<String, PairOutcome>>,
}

impl Store {
    fn open(dir: Option<&Path>, state: &State, resume: bool, allow_change: bool) -> Result<Self, EvalError> {
        let mut done = HashMap::new();
        let Some(dir) = dir else {
            return Ok(Self { dir: None, ledger: Mutex::new(None), done: Mutex::new(done) });
        };
        fs::create_dir_all(dir.join(CACHE_DIR))?;
        let state_path = dir.join(STATE_FILE);
        let ledger_path = dir.join(LEDGER_FILE);
        if resume {
            if let Ok(text) = fs::read_to_string(&state_path) {
                let stored: State =
                    serde_json::from_str(&text).map_err(|e| EvalError::State(format!("{STATE_FILE}: {e}")))?;
                if stored.config_hash != state.config_hash && !allow_change {
                    return Err(EvalError::ConfigMismatch {
                        stored: stored.config_hash,
                        current: state.config_hash.clone(),
                    });
                }
                if let Ok(text) = fs::read_to_string(&ledger_path) {
                    // A torn final line from a crash is ignored.
                    for line in text.lines() {
                        if let Ok(e) = serde_json::from_str::<LedgerEntry>(line) {
                            done.insert(e.key, e.outcome);
                        }
                    }
                }
            }
        } else if ledger_path.exists() {
            fs::remove_file(&ledger_path)?;
        }
        fs::write(&state_path, serde_json::to_string_pretty(state).expect("state serializes"))?;
        let ledger = OpenOptions::new().create(true).append(true).open(&ledger_path)?;
        Ok(Self { dir: Some(dir.to_path_buf()), ledger: Mutex::new(Some(ledger)), done: Mutex::new(done) })
    }

    fn get(&self, key: &str) -> Option<PairOutcome> {
        if let Some(o) = self.done.lock().unwrap().get(key) {
            return Some(o.clone());
        }
        let dir = self.dir.as_ref()?;
        let text = fs::read_to_string(dir.join(CACHE_DIR).join(format!("{key}.json"))).ok()?;
        let record: MeasurementRecord = serde_json::from_str(&text).ok()?;
        Some(PairOutcome::Measured { record: Box::new(record) })
    }

    fn put(&self, entry: LedgerEntry) -> Result<(), EvalError> {
        if let (Some(dir), PairOutcome::Measured { record }) = (&self.dir, &entry.outcome) {
            let path = dir.join(CACHE_DIR).join(format!("{}.json", entry.key));
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, serde_json::to_vec(record).expect("record serializes"))?;
            fs::rename(&tmp, &path)?;
        }
        if let Some(f) = self.ledger.lock().unwrap().as_mut() {
            let mut line = serde_json::to_string(&entry).expect("ledger entry serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.done.lock().unwrap().insert(entry.key, entry.outcome);
        Ok(())
    }
}

pub struct Evaluator<'a> {
    executor: &'a dyn Executor,
    measurer: &'a dyn Measurer,
    allow_config_change: bool,
    abort_after: Option<usize>,
}

struct Run<'r> {
    store: Store,
    config: &'r EvalConfig,
    config_hash: String,
    machine: String,
    executed: AtomicUsize,
    abort_after: Option<usize>,
}

impl Run<'_> {
    fn key(&self, kind: PairKind, program: &SolutionProgram, test: &TestCase) -> String {
        let input = test.input_digest.clone().unwrap_or_else(|| test.payload_hash());
        let expected = test.expected_output.as_deref().map(|e| sha256_hex(e.as_bytes())).unwrap_or_default();
        let expected = if kind == PairKind::Measurement { String::new() } else { expected };
        sha256_hex(
            format!(
                "{kind:?}\n{}\n{input}\n{expected}\n{}\n{}",
                program.source_hash(),
                self.config_hash,
                self.machine
            )
            .as_bytes(),
        )
    }

    fn claim(&self) -> Result<(), EvalError> {
        let n = self.executed.fetch_add(1, Ordering::SeqCst);
        match self.abort_after {
            Some(limit) if n >= limit => Err(EvalError::Aborted(limit)),
            _ => Ok(()),
        }
    }

    fn check_output(
        &self,
        executor: &dyn Executor,
        problem: &Problem,
        kind: PairKind,
        program: &SolutionProgram,
        test: &TestCase,
    ) -> Result<PairOutcome, EvalError> {
        let key = self.key(kind, program, test);
        if let Some(o) = self.store.get(&key) {
            return Ok(o);
        }
        self.claim()?;
        let limits = match kind {
            PairKind::Correctness => self.config.correctness_limits,
            _ => self.config.stressful_limits,
        };
        let req = ExecutionRequest {
            program,
            level: problem.level,
            entry_point: problem.entry_point.as_deref(),
            test,
            limits,
        };
        let r = executor.execute(&req);
        if r.status == Status::InfraError {
            return Err(EvalError::Infra {
                problem_id: problem.id.clone(),
                program: program.label.clone(),
                message: r.stderr,
            });
        }
        let expected = test.expected_output.as_deref().unwrap_or_default();
        let outcome = if compare_output(&r, expected, problem.level) {
            PairOutcome::Passed
        } else if r.status == Status::Ok {
            PairOutcome::Failed { status: r.status, reason: format!("test {}: output differs from expected", test.id) }
        } else {
            PairOutcome::Failed { status: r.status, reason: format!("test {}: {:?}", test.id, r.status) }
        };
        self.store.put(LedgerEntry {
            key,
            kind,
            problem_id: problem.id.clone(),
            program: program.label.clone(),
            test_id: test.id.clone(),
            outcome: outcome.clone(),
        })?;
        Ok(outcome)
    }

    fn measure(
        &self,
        measurer: &dyn Measurer,
        problem: &Problem,
        program: &SolutionProgram,
        test: &TestCase,
    ) -> Result<MeasurementRecord, EvalError> {
        let key = self.key(PairKind::Measurement, program, test);
        if let Some(PairOutcome::Measured { record }) = self.store.get(&key) {
            return Ok(*record);
        }
        self.claim()?;
        let record = measurer.measure(problem, program, test, self.config.runs, self.config.stressful_limits)?;
        self.store.put(LedgerEntry {
            key,
            kind: PairKind::Measurement,
            problem_id: problem.id.clone(),
            program: program.label.clone(),
            test_id: test.id.clone(),
            outcome: PairOutcome::Measured { record: Box::new(record.clone()) },
        })?;
        Ok(record)
    }

    /// Summed aggregate over the suite, or the first failure.
    fn summed(
        &self,
        measurer: &dyn Measurer,
        problem: &Problem,
        program: &SolutionProgram,
    ) -> Result<Result<f64, String>, EvalError> {
        let mut total = 0.0;
        for t in &problem.stressful_tests {
            let rec = self.measure(measurer, problem, program, t)?;
            match (rec.failed, rec.aggregate_ic) {
                (None, Some(ic)) => total += ic,
                (Some(why), _) => return Ok(Err(format!("test {}: {why}", t.id))),
                (None, None) => return Ok(Err(format!("test {}: no aggregate", t.id))),
            }
        }
        Ok(Ok(total))
    }
}

fn first_failure(outcomes: Vec<PairOutcome>) -> Option<(Status, String)> {
    outcomes.into_iter().find_map(|o| match o {
        PairOutcome::Failed { status, reason } => Some((status, reason)),
        _ => None,
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl<'a> Evaluator<'a> {
    pub fn new(executor: &'a dyn Executor, measurer: &'a dyn Measurer) -> Self {
        Self { executor, measurer, allow_config_change: false, abort_after: None }
    }

    /// Lets [`Evaluator::resume`] continue a run made under another configuration.
    pub fn allow_config_change(mut self, allow: bool) -> Self {
        self.allow_config_change = allow;
        self
    }

    /// Stops with [`EvalError::Aborted`] once `n` pairs have been executed.
    pub fn abort_after_pairs(mut self, n: Option<usize>) -> Self {
        self.abort_after = n;
        self
    }

    pub fn config_hash(&self, config: &EvalConfig) -> String {
        let p = self.measurer.provenance();
        let doc = serde_json::json!({
            "runs": config.runs,
            "correctness_limits": config.correctness_limits,
            "stressful_limits": config.stressful_limits,
            "backend": p.backend,
            "runner": p.runner_version,
        });
        sha256_hex(doc.to_string().as_bytes())[..16].to_string()
    }

    /// Fresh evaluation; prior ledger entries are discarded.
    pub fn evaluate(&self, job: &EvaluationJob) -> Result<MetricReport, EvalError> {
        self.run(job, false)
    }

    /// Continues a previous evaluation from its ledger.
    pub fn resume(&self, job: &EvaluationJob) -> Result<MetricReport, EvalError> {
        self.run(job, true)
    }

    fn run(&self, job: &EvaluationJob, resume: bool) -> Result<MetricReport, EvalError> {
        if job.candidates.values().all(Vec::is_empty) {
            return Err(EvalError::NoCandidates);
        }
        let unknown: Vec<String> = job
            .candidates
            .keys()
            .filter(|id| !job.problems.iter().any(|p| &p.id == *id))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(EvalError::UnknownProblems(unknown));
        }
        let evaluated: Vec<(&Problem, &[SolutionProgram])> = job
            .problems
            .iter()
            .filter_map(|p| job.candidates.get(&p.id).filter(|c| !c.is_empty()).map(|c| (p, c.as_slice())))
            .collect();
        for (p, cands) in &evaluated {
            for &k in &job.config.ks {
                metrics::pass_at_k(cands.len() as u64, 0, k)
                    .map_err(|source| EvalError::Metric { problem_id: p.id.clone(), source })?;
            }
        }

        let provenance = self.measurer.provenance();
        let config_hash = self.config_hash(&job.config);
        let state = State { config_hash: config_hash.clone(), machine: provenance.machine.clone() };
        let run = Run {
            store: Store::open(job.output_dir.as_deref(), &state, resume, self.allow_config_change)?,
            config: &job.config,
            config_hash: config_hash.clone(),
            machine: provenance.machine.clone(),
            executed: AtomicUsize::new(0),
            abort_after: self.abort_after,
        };

        let mut problems = Vec::with_capacity(evaluated.len());
        for (p, cands) in &evaluated {
            problems.push(self.evaluate_problem(&run, p, cands)?);
        }

        let efficiency_excluded: BTreeMap<String, String> = problems
            .iter()
            .filter_map(|p| p.efficiency_excluded.clone().map(|r| (p.problem_id.clone(), r)))
            .collect();
        let pass_at_k = job
            .config
            .ks
            .iter()
            .map(|&k| (k, mean(problems.iter().map(|p| p.pass_at_k[&k])).unwrap_or(0.0)))
            .collect();
        let efficient_at_k = job
            .config
            .ks
            .iter()
            .filter_map(|&k| mean(problems.iter().filter_map(|p| p.efficient_at_k.get(&k).copied())).map(|m| (k, m)))
            .collect();
        let spread: BTreeMap<String, Vec<Option<f64>>> = problems
            .iter()
            .filter(|p| p.efficiency_excluded.is_none())
            .map(|p| {
                let counts = p
                    .candidates
                    .iter()
                    .map(|c| c.summed_ic.filter(|_| c.status.is_correct()))
                    .collect();
                (p.problem_id.clone(), counts)
            })
            .collect();
        let report = MetricReport {
            pass_at_k,
            efficient_at_k,
            mean_speedup: mean(problems.iter().filter_map(|p| p.speedup)),
            distinguishability: metrics::distinguishability_rsd(&spread),
            provenance: ReportProvenance {
                measurement: provenance,
                config_hash,
                runs: job.config.runs,
                seed: job.config.seed,
                efficiency_excluded,
                not_evaluated: job
                    .problems
                    .iter()
                    .filter(|p| !evaluated.iter().any(|(e, _)| e.id == p.id))
                    .map(|p| p.id.clone())
                    .collect(),
            },
            problems,
        };
        if let Some(dir) = &job.output_dir {
            write_outputs(dir, &report)?;
        }
        Ok(report)
    }

    fn evaluate_problem(
        &self,
        run: &Run<'_>,
        problem: &Problem,
        cands: &[SolutionProgram],
    ) -> Result<ProblemReport, EvalError> {
        let checked = |kind: PairKind, tests: &[TestCase], cand: &SolutionProgram| {
            tests
                .par_iter()
                .filter(|t| t.expected_output.is_some())
                .map(|t| run.check_output(self.executor, problem, kind, cand, t))
                .collect::<Result<Vec<_>, _>>()
        };
        // Correctness and output matching fan out; measurement below does not.
        let mut outcomes: Vec<CandidateOutcome> = cands
            .par_iter()
            .map(|cand| -> Result<CandidateOutcome, EvalError> {
                let mut out = CandidateOutcome {
                    problem_id: problem.id.clone(),
                    label: cand.label.clone(),
                    source_hash: cand.source_hash(),
                    status: CandidateStatus::Correct,
                    reason: None,
                    summed_ic: None,
                };
                if let Some((_, why)) = first_failure(checked(PairKind::Correctness, &problem.correctness_tests, cand)?) {
                    out.status = CandidateStatus::CorrectnessFailure;
                    out.reason = Some(why);
                    return Ok(out);
                }
                if let Some((status, why)) =
                    first_failure(checked(PairKind::StressfulOutput, &problem.stressful_tests, cand)?)
                {
                    out.status = if status == Status::Timeout {
                        CandidateStatus::StressfulTimeout
                    } else {
                        CandidateStatus::StressfulMismatch
                    };
                    out.reason = Some(why);
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;

        let mut excluded = None;
        let mut best: Option<(String, f64)> = None;
        if problem.stressful_tests.is_empty() {
            excluded = Some("no stressful suite".to_string());
        } else {
            let mut failures = Vec::new();
            for gt in &problem.ground_truths {
                match run.summed(self.measurer, problem, gt)? {
                    Ok(ic) if best.as_ref().is_none_or(|(_, b)| ic < *b) => best = Some((gt.label.clone(), ic)),
                    Ok(_) => {}
                    Err(why) => failures.push(format!("{}: {why}", gt.label)),
                }
            }
            if best.is_none() {
                excluded = Some(format!("no ground truth could be measured ({})", failures.join("; ")));
            }
        }

        if let Some((_, best_ic)) = &best {
            for out in outcomes.iter_mut().filter(|o| o.status.is_correct()) {
                let cand = cands.iter().find(|c| c.label == out.label).expect("outcome of a known candidate");
                match run.summed(self.measurer, problem, cand)? {
                    Ok(ic) => {
                        out.summed_ic = Some(ic);
                        if ic < *best_ic {
                            out.status = CandidateStatus::Efficient;
                        }
                    }
                    Err(why) => {
                        out.status = CandidateStatus::MeasurementFailure;
                        out.reason = Some(why);
                    }
                }
            }
        }

        let n = cands.len() as u64;
        let c = outcomes.iter().filter(|o| o.status.is_correct()).count() as u64;
        let c_f = excluded
            .is_none()
            .then(|| outcomes.iter().filter(|o| o.status == CandidateStatus::Efficient).count() as u64);
        let metric = |source| EvalError::Metric { problem_id: problem.id.clone(), source };
        let mut pass_at_k = BTreeMap::new();
        let mut efficient_at_k = BTreeMap::new();
        for &k in &run.config.ks {
            pass_at_k.insert(k, metrics::pass_at_k(n, c, k).map_err(metric)?);
            if let Some(cf) = c_f {
                efficient_at_k.insert(k, metrics::efficient_at_k(n, cf, k).map_err(metric)?);
            }
        }
        let speedups: Vec<f64> = match &best {
            Some((_, b)) => outcomes
                .iter()
                .filter(|o| o.status.is_correct())
                .filter_map(|o| o.summed_ic.and_then(|ic| metrics::speedup(*b, ic).ok()))
                .collect(),
            None => Vec::new(),
        };
        // Outcomes keep candidate order regardless of scheduling.
        outcomes.sort_by_key(|o| cands.iter().position(|c| c.label == o.label));
        Ok(ProblemReport {
            problem_id: problem.id.clone(),
            n,
            c,
            c_f,
            pass_at_k,
            efficient_at_k,
            best_ground_truth: best.as_ref().map(|(l, _)| l.clone()),
            best_ground_truth_ic: best.map(|(_, ic)| ic),
            speedup: speedups.iter().cloned().reduce(f64::max),
            mean_speedup_over_correct: mean(speedups.iter().copied()),
            efficiency_excluded: excluded,
            candidates: outcomes,
        })
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

/// Aggregate table: pass@k, efficient@k with its relative drop, speedup.
pub fn render_summary(report: &MetricReport) -> String {
    let excluded = report.provenance.efficiency_excluded.len();
    let mut out = format!(
        "problems evaluated: {} ({} excluded from efficiency metrics)\n",
        report.problems.len(),
        excluded
    );
    out.push_str(&format!("{:<6}{:>10}  {:<22}{:>10}\n", "k", "pass@k", "efficient@k (delta)", "speedup"));
    let speedup = report.mean_speedup.map(|s| format!("{s:.2}")).unwrap_or_else(|| "-".into());
    for (k, pass) in &report.pass_at_k {
        let eff = match report.efficient_at_k.get(k) {
            Some(e) if *pass > 0.0 => format!("{} ({}%)", pct(*e), pct(1.0 - e / pass)),
            Some(e) => format!("{} (-)", pct(*e)),
            None => "-".into(),
        };
        out.push_str(&format!("{:<6}{:>10}  {:<22}{:>10}\n", k, pct(*pass), eff, speedup));
    }
    if let Some(d) = report.distinguishability.mean {
        out.push_str(&format!("distinguishability (mean RSD over correct candidates): {d:.2}%\n"));
    }
    for (id, why) in &report.provenance.efficiency_excluded {
        out.push_str(&format!("excluded {id}: {why}\n"));
    }
    out
}

/// One audit line per candidate plus the full report.
fn write_outputs(dir: &Path, report: &MetricReport) -> io::Result<()> {
    let mut audit = String::new();
    for p in &report.problems {
        for c in &p.candidates {
            audit.push_str(&serde_json::to_string(c).expect("outcome serializes"));
            audit.push('\n');
        }
    }
    fs::write(dir.join(AUDIT_FILE), audit)?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report).expect("report serializes"))
}
