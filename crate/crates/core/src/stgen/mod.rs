//! Contract-guided stressful test generation.
//!
//! Phase I grows a contract (input assertions inserted into a ground truth)
//! one assertion at a time. Phase II asks for expression cases (function
//! level) or generator cases (file level) and validates each on the
//! instrumented ground truth. Phase III hands accumulated contract conflicts
//! to a judge, whose verdict either repairs the contract or freezes it.

pub mod parse;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::prompts::{Prompts, Template};
use crate::llm::{ChatRequest, Client, LlmError, Message, Phase, RequestTag};
use crate::model::{Level, Payload, Problem, SolutionProgram, TestCase};
use crate::perf::Meter;
use crate::pysrc::{self, AnalysisError, Insertion, Placement};
use crate::sandbox::{ExecutionRequest, ExecutionResult, Limits, Sandbox, SandboxError, Status, CONTRACT_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionKind {
    Type,
    Scale,
    Intrinsic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    FunctionBodyStart,
    AfterInputStatement,
    AfterEnclosingLoop,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InsertionSite {
    pub level: Level,
    pub anchor: Anchor,
    /// 1-based line: assertions go before it for [`Anchor::FunctionBodyStart`]
    /// and after it otherwise.
    pub line: usize,
    pub indent: String,
}

impl InsertionSite {
    fn placement(&self) -> Placement {
        match self.anchor {
            Anchor::FunctionBodyStart => Placement::Before(self.line),
            _ => Placement::After(self.line),
        }
    }

    fn describe(&self) -> String {
        match self.anchor {
            Anchor::FunctionBodyStart => "at the beginning of the function body".into(),
            Anchor::AfterInputStatement => format!("right after the input statement ending on line {}", self.line),
            Anchor::AfterEnclosingLoop => {
                format!("after the loop ending on line {}, once all its input has been read", self.line)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionStatement {
    /// Stable within a contract; carried in the sentinel tag.
    pub id: u64,
    pub condition: String,
    /// Full inserted line, without indentation.
    pub text: String,
    pub site: InsertionSite,
    pub kind: AssertionKind,
}

impl AssertionStatement {
    fn new(id: u64, condition: String, site: InsertionSite) -> Self {
        Self {
            text: format!("assert {condition}, \"{CONTRACT_SENTINEL}{id}\""),
            kind: parse::assertion_kind(&condition),
            id,
            condition,
            site,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractStatus {
    Draft,
    Active,
    JudgeValidated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub problem_id: String,
    pub target_label: String,
    pub target_source: String,
    pub assertions: Vec<AssertionStatement>,
    pub instrumented_source: String,
    pub status: ContractStatus,
    pub conflict_count: u32,
    /// Phase I stopped early on a model failure.
    pub degraded: bool,
    /// Bumped on every change to the assertion list.
    pub revision: u32,
    next_id: u64,
}

impl Contract {
    pub fn new(problem_id: &str, target: &SolutionProgram) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            target_label: target.label.clone(),
            target_source: target.source.clone(),
            assertions: Vec::new(),
            instrumented_source: target.source.clone(),
            status: ContractStatus::Draft,
            conflict_count: 0,
            degraded: false,
            revision: 0,
            next_id: 1,
        }
    }

    pub fn id(&self) -> String {
        format!("{}#r{}", self.problem_id, self.revision)
    }

    pub fn instrument(source: &str, assertions: &[AssertionStatement]) -> Result<String, AnalysisError> {
        let ins: Vec<Insertion> = assertions
            .iter()
            .map(|a| Insertion { placement: a.site.placement(), indent: a.site.indent.clone(), text: a.text.clone() })
            .collect();
        pysrc::insert_lines(source, &ins)
    }

    fn set_assertions(&mut self, assertions: Vec<AssertionStatement>) -> Result<(), AnalysisError> {
        self.instrumented_source = Self::instrument(&self.target_source, &assertions)?;
        self.assertions = assertions;
        self.revision += 1;
        Ok(())
    }

    pub fn instrumented_program(&self) -> SolutionProgram {
        SolutionProgram::ground_truth(format!("{}+contract", self.target_label), self.instrumented_source.clone())
    }

    pub fn assertion_by_id(&self, id: u64) -> Option<&AssertionStatement> {
        self.assertions.iter().find(|a| a.id == id)
    }

    fn take_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub contract_id: String,
    pub test_case_id: String,
    pub assertion_id: u64,
    pub assertion_text: String,
    pub input_digest: String,
    pub stderr_excerpt: String,
    pub case: TestCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSubject {
    ContractInvalid,
    TestcaseInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub subject: VerdictSubject,
    pub rationale: String,
    /// Indices into the contract's assertion list at judging time.
    pub assertions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unparseable,
    MaterializationError,
    Duplicate,
    TooSlowForBudget,
    RuntimeError,
    OutOfMemory,
    ContractViolation,
    NotStressful,
    JudgedInvalid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseDecision {
    Accepted(TestCase),
    Conflict(ConflictRecord),
    Rejected { reason: RejectReason, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    TargetChosen { label: String, correctness_cost: Option<f64> },
    StressFloor { median_correctness_cost: Option<f64>, floor: Option<f64> },
    AssertionTried { condition: String, anchor: Anchor, line: usize, accepted: bool, reason: Option<String> },
    ContractReady { contract_id: String, assertions: usize, degraded: bool },
    CaseRejected { case_id: String, reason: RejectReason, detail: String },
    CaseAccepted { case_id: String, input_digest: String, cost: Option<f64> },
    Conflict { contract_id: String, case_id: String, assertion: String, conflict_count: u32 },
    JudgeInvoked { contract_id: String, conflict_count: u32, conflicts: usize },
    JudgeDeferred { error: String },
    Verdict { verdict: JudgeVerdict, removed: Vec<String> },
    LlmFailure { phase: String, error: String },
    BudgetExhausted { attempts: u32, accepted: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub problem_id: String,
    pub events: Vec<AuditEvent>,
}

impl Audit {
    fn push(&mut self, e: AuditEvent) {
        log::debug!("stgen {}: {:?}", self.problem_id, e);
        self.events.push(e);
    }

    pub fn judge_invocations(&self) -> Vec<u32> {
        self.events
            .iter()
            .filter_map(|e| match e {
                AuditEvent::JudgeInvoked { conflict_count, .. } => Some(*conflict_count),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgenConfig {
    pub target_count: usize,
    pub max_iters: usize,
    pub judge_threshold: u32,
    pub retries_per_candidate: u32,
    pub attempt_budget: u32,
    /// Accepted cases must cost at least this multiple of the median correctness-test cost.
    pub stress_factor: f64,
    pub seed: u64,
    pub generation_temperature: f64,
    pub judge_temperature: f64,
    pub max_tokens: u32,
    pub judge_context_chars: usize,
    pub validation_limits: Limits,
}

impl Default for StgenConfig {
    fn default() -> Self {
        Self {
            target_count: 20,
            max_iters: 8,
            judge_threshold: 5,
            retries_per_candidate: 3,
            attempt_budget: 60,
            stress_factor: 10.0,
            seed: 0,
            generation_temperature: 0.7,
            judge_temperature: 0.0,
            max_tokens: 2048,
            judge_context_chars: 24_000,
            validation_limits: Limits::MEASUREMENT,
        }
    }
}

#[derive(Debug, Error)]
pub enum StgenError {
    #[error("source analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("execution infrastructure failed: {0}")]
    Infra(String),
    #[error("problem {0} has no ground truth")]
    NoGroundTruth(String),
}

/// Instruction cost of one execution, used for target choice and the stress floor.
pub trait CostModel: Sync {
    fn cost(&self, req: &ExecutionRequest<'_>) -> Result<f64, String>;
}

impl CostModel for Meter {
    fn cost(&self, req: &ExecutionRequest<'_>) -> Result<f64, String> {
        let counted = self.count_instructions(req).map_err(|e| e.to_string())?;
        match (counted.result.status, counted.instructions) {
            (Status::Ok, Some(n)) => Ok(n.max(1) as f64),
            (status, _) => Err(format!("{status:?}")),
        }
    }
}

impl<F> CostModel for F
where
    F: Fn(&ExecutionRequest<'_>) -> Result<f64, String> + Sync,
{
    fn cost(&self, req: &ExecutionRequest<'_>) -> Result<f64, String> {
        self(req)
    }
}

/// Insertion sites for a file-level program, one per distinct anchor position.
pub fn identify_input_locations(source: &str) -> Result<Vec<InsertionSite>, AnalysisError> {
    let mut sites: Vec<InsertionSite> = Vec::new();
    for read in pysrc::find_input_reads(source)? {
        let site = match (&read.enclosing_loop, &read.header_block) {
            (Some((_, end, indent)), _) => InsertionSite {
                level: Level::File,
                anchor: Anchor::AfterEnclosingLoop,
                line: *end,
                indent: indent.clone(),
            },
            (None, Some((end, indent))) => InsertionSite {
                level: Level::File,
                anchor: Anchor::AfterInputStatement,
                line: *end,
                indent: indent.clone(),
            },
            (None, None) => InsertionSite {
                level: Level::File,
                anchor: Anchor::AfterInputStatement,
                line: read.stmt_end,
                indent: read.indent_text.clone(),
            },
        };
        if !sites.contains(&site) {
            sites.push(site);
        }
    }
    Ok(sites)
}

pub fn function_site(source: &str, entry_point: &str) -> Result<InsertionSite, AnalysisError> {
    let f = pysrc::find_function(source, entry_point)?;
    Ok(InsertionSite {
        level: Level::Function,
        anchor: Anchor::FunctionBodyStart,
        line: f.body_line,
        indent: f.body_indent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StgenOutcome {
    pub problem_id: String,
    pub accepted: Vec<TestCase>,
    pub contract: Contract,
    pub attempts: u32,
    pub diagnostic: Option<String>,
    pub audit: Audit,
}

/// Per-problem mutable state of one pipeline run.
pub struct Session {
    pub contract: Contract,
    pub conflicts: Vec<ConflictRecord>,
    pub accepted: Vec<TestCase>,
    pub audit: Audit,
    pub floor: Option<f64>,
    digests: HashSet<String>,
    seed_counter: u64,
    case_counter: u32,
}

impl Session {
    pub fn new(problem: &Problem, target: &SolutionProgram) -> Self {
        Self {
            contract: Contract::new(&problem.id, target),
            conflicts: Vec::new(),
            accepted: Vec::new(),
            audit: Audit { problem_id: problem.id.clone(), events: Vec::new() },
            floor: None,
            digests: HashSet::new(),
            seed_counter: 0,
            case_counter: 0,
        }
    }
}

/// Reply from the model or the reason none was obtained.
type Reply = Result<String, LlmError>;

pub struct Stgen<'a> {
    pub sandbox: &'a Sandbox,
    pub llm: &'a Client,
    pub prompts: &'a Prompts,
    pub cost: Option<&'a dyn CostModel>,
    pub config: StgenConfig,
}

fn excerpt(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut start = s.len() - max;
    while !s.is_char_boundary(start) {
        start += 1;
    }
    format!("...{}", &s[start..])
}

fn head(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { (xs[m - 1] + xs[m]) / 2.0 })
}

fn describe_payload(p: &Payload) -> String {
    match p {
        Payload::Args(a) => serde_json::to_string(a).unwrap_or_default(),
        Payload::Stdin(s) => format!("stdin:\n{}", head(s, 600)),
        Payload::Expressions(e) => serde_json::to_string(e).unwrap_or_default(),
        Payload::Generator(g) => g.clone(),
    }
}

impl<'a> Stgen<'a> {
    fn ask(&self, problem_id: &str, phase: Phase, prompt: String, temperature: f64) -> Reply {
        let req = ChatRequest {
            messages: vec![Message::user(prompt)],
            temperature,
            max_tokens: self.config.max_tokens,
            model_id: self.llm.model_id().to_string(),
            tag: RequestTag { problem_id: problem_id.to_string(), phase },
        };
        self.llm.complete(&req).map(|r| r.text)
    }

    fn run(&self, problem: &Problem, program: &SolutionProgram, test: &TestCase, limits: Limits) -> ExecutionResult {
        self.sandbox.execute(&ExecutionRequest {
            program,
            level: problem.level,
            entry_point: problem.entry_point.as_deref(),
            test,
            limits,
        })
    }

    fn cost_of(&self, problem: &Problem, program: &SolutionProgram, test: &TestCase) -> Option<Result<f64, String>> {
        let model = self.cost?;
        Some(model.cost(&ExecutionRequest {
            program,
            level: problem.level,
            entry_point: problem.entry_point.as_deref(),
            test,
            limits: Limits::MEASUREMENT,
        }))
    }

    /// Ground truth with the lowest summed cost on the correctness tests,
    /// with its per-test costs.
    pub fn choose_target(&self, problem: &Problem) -> Result<(SolutionProgram, Option<Vec<f64>>), StgenError> {
        let first = problem
            .ground_truths
            .first()
            .ok_or_else(|| StgenError::NoGroundTruth(problem.id.clone()))?;
        if self.cost.is_none() {
            return Ok((first.clone(), None));
        }
        let mut best: Option<(f64, &SolutionProgram, Vec<f64>)> = None;
        for gt in &problem.ground_truths {
            let mut costs = Vec::new();
            for t in &problem.correctness_tests {
                match self.cost_of(problem, gt, t) {
                    Some(Ok(c)) => costs.push(c),
                    Some(Err(e)) => log::warn!("{}: costing {} on {} failed: {e}", problem.id, gt.label, t.id),
                    None => {}
                }
            }
            if costs.is_empty() {
                continue;
            }
            let total: f64 = costs.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                best = Some((total, gt, costs));
            }
        }
        Ok(match best {
            Some((_, gt, costs)) => (gt.clone(), Some(costs)),
            None => (first.clone(), None),
        })
    }

    /// Every input the contract must accept: correctness tests plus accepted stressful cases.
    fn contract_holds(&self, problem: &Problem, source: &str, accepted: &[TestCase]) -> Result<Result<(), String>, StgenError> {
        let program = SolutionProgram::ground_truth("contract-check", source.to_string());
        let runs: Vec<(&TestCase, Limits)> = problem
            .correctness_tests
            .iter()
            .map(|t| (t, Limits::CORRECTNESS))
            .chain(accepted.iter().map(|t| (t, self.config.validation_limits)))
            .collect();
        let results: Vec<(&TestCase, ExecutionResult)> = runs
            .par_iter()
            .map(|(t, lim)| (*t, self.run(problem, &program, t, *lim)))
            .collect();
        for (t, r) in results {
            match r.status {
                Status::Ok => {}
                Status::InfraError => return Err(StgenError::Infra(r.stderr)),
                s => {
                    let why = match r.failed_contract_assertion() {
                        Some(_) => "the assertion fails".to_string(),
                        None => format!("{s:?}: {}", excerpt(r.stderr.trim(), 300)),
                    };
                    return Ok(Err(format!("test {}: {why}", t.id)));
                }
            }
        }
        Ok(Ok(()))
    }

    fn contract_sites(&self, problem: &Problem, target: &str) -> Result<Vec<InsertionSite>, StgenError> {
        Ok(match (problem.level, problem.entry_point.as_deref()) {
            (Level::Function, Some(entry)) => vec![function_site(target, entry)?],
            _ => identify_input_locations(target)?,
        })
    }

    fn render_tests(problem: &Problem) -> String {
        let mut out = String::new();
        for t in problem.correctness_tests.iter().take(10) {
            out.push_str(&format!("- {}\n", head(&describe_payload(&t.payload), 400)));
        }
        out
    }

    fn render_assertions(assertions: &[AssertionStatement]) -> String {
        if assertions.is_empty() {
            return "(none)".into();
        }
        assertions
            .iter()
            .map(|a| format!("- assert {}  # {}", a.condition, a.site.describe()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Phase I over `sites`, keeping every assertion already in the contract.
    /// Each model call is one iteration; a rejected assertion is dropped alone.
    pub fn grow_contract(
        &self,
        problem: &Problem,
        session: &mut Session,
        sites: &[InsertionSite],
        feedback: Option<&str>,
    ) -> Result<(), StgenError> {
        let mut remaining = self.config.max_iters;
        for (k, site) in sites.iter().enumerate() {
            let share = remaining.div_ceil(sites.len() - k);
            let mut used = 0;
            let mut rejection: Option<String> = None;
            while used < share {
                used += 1;
                remaining -= 1;
                let marker = Insertion {
                    placement: site.placement(),
                    indent: site.indent.clone(),
                    text: "# >>> new assertion goes here".into(),
                };
                let mut shown_ins: Vec<Insertion> = session
                    .contract
                    .assertions
                    .iter()
                    .map(|a| Insertion {
                        placement: a.site.placement(),
                        indent: a.site.indent.clone(),
                        text: format!("assert {}", a.condition),
                    })
                    .collect();
                shown_ins.push(marker);
                let shown = pysrc::insert_lines(&session.contract.target_source, &shown_ins)?;
                let mut fb = String::new();
                if let Some(f) = feedback {
                    fb.push_str(&format!("\nFeedback from review of earlier assertions:\n{f}\n"));
                }
                if let Some(r) = &rejection {
                    fb.push_str(&format!("\nYour previous proposal was rejected: {r}\n"));
                }
                let prompt = self.prompts.render(
                    Template::Contract,
                    &[
                        ("description", &problem.description),
                        ("program", &shown),
                        ("tests", &Self::render_tests(problem)),
                        ("site", &site.describe()),
                        ("assertions", &Self::render_assertions(&session.contract.assertions)),
                        ("feedback", &fb),
                    ],
                );
                let reply = match self.ask(&problem.id, Phase::Contract, prompt, self.config.generation_temperature) {
                    Ok(r) => r,
                    Err(e) => {
                        session.contract.degraded = true;
                        session.audit.push(AuditEvent::LlmFailure { phase: "contract".into(), error: e.to_string() });
                        return Ok(());
                    }
                };
                let cond = match parse::assertion_condition(&reply) {
                    Ok(Some(c)) => c,
                    Ok(None) => break,
                    Err(e) => {
                        session.audit.push(AuditEvent::AssertionTried {
                            condition: head(reply.trim(), 200),
                            anchor: site.anchor,
                            line: site.line,
                            accepted: false,
                            reason: Some(e.clone()),
                        });
                        rejection = Some(e);
                        continue;
                    }
                };
                if session.contract.assertions.iter().any(|a| a.condition == cond && a.site == *site) {
                    break;
                }
                let id = session.contract.take_id();
                let candidate = AssertionStatement::new(id, cond.clone(), site.clone());
                let mut trial = session.contract.assertions.clone();
                trial.push(candidate);
                let source = match Contract::instrument(&session.contract.target_source, &trial) {
                    Ok(s) => s,
                    Err(e) => {
                        rejection = Some(e.to_string());
                        continue;
                    }
                };
                let verdict = match pysrc::mask(&source) {
                    Err(e) => Err(e.to_string()),
                    Ok(_) => self.contract_holds(problem, &source, &session.accepted)?,
                };
                session.audit.push(AuditEvent::AssertionTried {
                    condition: cond.clone(),
                    anchor: site.anchor,
                    line: site.line,
                    accepted: verdict.is_ok(),
                    reason: verdict.as_ref().err().cloned(),
                });
                match verdict {
                    Ok(()) => {
                        session.contract.set_assertions(trial)?;
                        rejection = None;
                    }
                    Err(why) => rejection = Some(format!("`assert {cond}`: {why}")),
                }
            }
        }
        Ok(())
    }

    /// Builds the initial contract for `target`.
    pub fn generate_contract(&self, problem: &Problem, session: &mut Session) -> Result<(), StgenError> {
        let sites = self.contract_sites(problem, &session.contract.target_source)?;
        self.grow_contract(problem, session, &sites, None)?;
        session.contract.status = ContractStatus::Active;
        session.audit.push(AuditEvent::ContractReady {
            contract_id: session.contract.id(),
            assertions: session.contract.assertions.len(),
            degraded: session.contract.degraded,
        });
        Ok(())
    }

    fn next_case_id(&self, problem: &Problem, session: &mut Session) -> (String, u64) {
        session.case_counter += 1;
        session.seed_counter += 1;
        let seed = self
            .config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(session.seed_counter);
        (format!("{}-cand{:03}", problem.id, session.case_counter), seed)
    }

    /// Phase II: asks for one candidate. `Err` carries the parse failure.
    pub fn generate_case(
        &self,
        problem: &Problem,
        session: &mut Session,
        feedback: Option<&str>,
    ) -> Result<Result<TestCase, (String, String)>, LlmError> {
        let (id, seed) = self.next_case_id(problem, session);
        let contract_text = if session.contract.assertions.is_empty() {
            "# (no assertions)".to_string()
        } else {
            session
                .contract
                .assertions
                .iter()
                .map(|a| format!("assert {}  # {}", a.condition, a.site.describe()))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let demos = if session.accepted.is_empty() {
            "(none yet)".to_string()
        } else {
            session
                .accepted
                .iter()
                .rev()
                .take(8)
                .map(|t| format!("- {}", head(&describe_payload(&t.payload), 1200)))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let fb = feedback.map(|f| format!("\nYour previous attempt was rejected: {f}\n")).unwrap_or_default();
        let target = &session.contract.target_source;
        match (problem.level, problem.entry_point.as_deref()) {
            (Level::Function, Some(entry)) => {
                let f = pysrc::find_function(target, entry).map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
                let names: Vec<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
                let count = f.required_params();
                let prompt = self.prompts.render(
                    Template::CaseExpression,
                    &[
                        ("description", &problem.description),
                        ("program", target),
                        ("entry_point", entry),
                        ("param_count", &count.to_string()),
                        ("params", &names.join(", ")),
                        ("contract", &contract_text),
                        ("demonstrations", &demos),
                        ("feedback", &fb),
                    ],
                );
                let reply = self.ask(&problem.id, Phase::Case, prompt, self.config.generation_temperature)?;
                let max = (!f.var_positional).then_some(f.params.len());
                Ok(parse::expressions(&reply, count, max)
                    .map(|e| TestCase::new(id.clone(), Payload::Expressions(e)).with_seed(seed))
                    .map_err(|e| (id, e)))
            }
            _ => {
                let prompt = self.prompts.render(
                    Template::CaseGenerator,
                    &[
                        ("description", &problem.description),
                        ("program", target),
                        ("contract", &contract_text),
                        ("demonstrations", &demos),
                        ("feedback", &fb),
                    ],
                );
                let reply = self.ask(&problem.id, Phase::Case, prompt, self.config.generation_temperature)?;
                Ok(parse::generator(&reply)
                    .map(|g| TestCase::new(id.clone(), Payload::Generator(g)).with_seed(seed))
                    .map_err(|e| (id, e)))
            }
        }
    }

    /// Validates a candidate on the instrumented ground truth.
    pub fn validate_case(&self, problem: &Problem, session: &mut Session, candidate: TestCase) -> Result<CaseDecision, StgenError> {
        let reject = |reason, detail: String| Ok(CaseDecision::Rejected { reason, detail });
        let materialized = match self.sandbox.materialize(&candidate, problem.level) {
            Ok(m) => m,
            Err(SandboxError::Materialization(msg)) => return reject(RejectReason::MaterializationError, excerpt(&msg, 600)),
            Err(SandboxError::Infra(msg)) => return Err(StgenError::Infra(msg)),
        };
        if session.digests.contains(&materialized.digest) {
            return reject(RejectReason::Duplicate, format!("input {} already accepted", &materialized.digest[..12]));
        }
        let program = session.contract.instrumented_program();
        let result = self.run(problem, &program, &candidate, self.config.validation_limits);
        match result.status {
            Status::Ok => {}
            Status::InfraError => return Err(StgenError::Infra(result.stderr)),
            Status::Timeout => {
                return reject(
                    RejectReason::TooSlowForBudget,
                    format!("ground truth exceeded {:?}", self.config.validation_limits.time_limit),
                )
            }
            Status::Oom => return reject(RejectReason::OutOfMemory, excerpt(result.stderr.trim(), 300)),
            Status::AssertionError => {
                let id = result.failed_contract_assertion();
                let text = id
                    .and_then(|id| session.contract.assertion_by_id(id))
                    .map(|a| format!("assert {}", a.condition))
                    .unwrap_or_else(|| "unknown contract assertion".into());
                if session.contract.status == ContractStatus::JudgeValidated {
                    return reject(RejectReason::ContractViolation, text);
                }
                return Ok(CaseDecision::Conflict(ConflictRecord {
                    contract_id: session.contract.id(),
                    test_case_id: candidate.id.clone(),
                    assertion_id: id.unwrap_or(0),
                    assertion_text: text,
                    input_digest: materialized.digest.clone(),
                    stderr_excerpt: excerpt(result.stderr.trim(), 600),
                    case: candidate,
                }));
            }
            Status::RuntimeError | Status::WrongOutput => {
                return reject(RejectReason::RuntimeError, excerpt(result.stderr.trim(), 600))
            }
        }
        let target = SolutionProgram::ground_truth(session.contract.target_label.clone(), session.contract.target_source.clone());
        let cost = match self.cost_of(problem, &target, &candidate) {
            None => None,
            Some(Ok(c)) => Some(c),
            Some(Err(e)) => return reject(RejectReason::TooSlowForBudget, format!("cost measurement failed: {e}")),
        };
        if let (Some(floor), Some(c)) = (session.floor, cost) {
            if c < floor {
                return reject(RejectReason::NotStressful, format!("cost {c:.0} below floor {floor:.0}"));
            }
        }
        let mut accepted = candidate;
        accepted.expected_output = Some(result.output(problem.level).to_string());
        accepted.input_digest = Some(materialized.digest.clone());
        session.audit.push(AuditEvent::CaseAccepted {
            case_id: accepted.id.clone(),
            input_digest: materialized.digest.clone(),
            cost,
        });
        Ok(CaseDecision::Accepted(accepted))
    }

    fn render_conflicts(&self, conflicts: &[ConflictRecord]) -> String {
        let mut out = String::new();
        for (n, c) in conflicts.iter().rev().enumerate() {
            let entry = format!(
                "Conflict {}:\nFailing assertion: {}\nInput:\n{}\nError:\n{}\n\n",
                n + 1,
                c.assertion_text,
                head(&describe_payload(&c.case.payload), 2000),
                excerpt(&c.stderr_excerpt, 400),
            );
            if out.len() + entry.len() > self.config.judge_context_chars && n > 0 {
                out.push_str(&format!("({} older conflicts omitted)\n", conflicts.len() - n));
                break;
            }
            out.push_str(&entry);
        }
        out
    }

    /// Phase III: consults the judge once the conflict count reaches the threshold.
    pub fn maybe_invoke_judge(&self, session: &mut Session) -> Option<JudgeVerdict> {
        let contract = &session.contract;
        if contract.status == ContractStatus::JudgeValidated || contract.conflict_count < self.config.judge_threshold {
            return None;
        }
        session.audit.push(AuditEvent::JudgeInvoked {
            contract_id: contract.id(),
            conflict_count: contract.conflict_count,
            conflicts: session.conflicts.len(),
        });
        let numbered = contract
            .assertions
            .iter()
            .enumerate()
            .map(|(i, a)| format!("[{i}] assert {}  # {}", a.condition, a.site.describe()))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.prompts.render(
            Template::Judge,
            &[
                ("program", &contract.instrumented_source),
                ("contract", &numbered),
                ("conflicts", &self.render_conflicts(&session.conflicts)),
            ],
        );
        let reply = match self.ask(&contract.problem_id, Phase::Judge, prompt, self.config.judge_temperature) {
            Ok(r) => r,
            Err(e) => {
                session.audit.push(AuditEvent::JudgeDeferred { error: e.to_string() });
                return None;
            }
        };
        match parse::verdict(&reply, contract.assertions.len()) {
            Ok(v) => Some(v),
            Err(e) => {
                session.audit.push(AuditEvent::JudgeDeferred { error: e });
                None
            }
        }
    }

    /// Applies a verdict and returns the conflicting cases that should be validated again.
    pub fn apply_verdict(&self, problem: &Problem, session: &mut Session, verdict: JudgeVerdict) -> Result<Vec<TestCase>, StgenError> {
        let paired: Vec<TestCase> = session.conflicts.drain(..).map(|c| c.case).collect();
        match verdict.subject {
            VerdictSubject::TestcaseInvalid => {
                session.contract.status = ContractStatus::JudgeValidated;
                for case in &paired {
                    session.audit.push(AuditEvent::CaseRejected {
                        case_id: case.id.clone(),
                        reason: RejectReason::JudgedInvalid,
                        detail: head(&verdict.rationale, 300),
                    });
                }
                session.audit.push(AuditEvent::Verdict { verdict, removed: Vec::new() });
                Ok(Vec::new())
            }
            VerdictSubject::ContractInvalid => {
                let mut removed = Vec::new();
                let mut kept = Vec::new();
                for (i, a) in session.contract.assertions.iter().enumerate() {
                    if verdict.assertions.contains(&i) {
                        removed.push(a.clone());
                    } else {
                        kept.push(a.clone());
                    }
                }
                session.contract.set_assertions(kept)?;
                session.contract.conflict_count = 0;
                let mut sites: Vec<InsertionSite> = Vec::new();
                for a in &removed {
                    if !sites.contains(&a.site) {
                        sites.push(a.site.clone());
                    }
                }
                let feedback = format!(
                    "These assertions were judged wrong and removed:\n{}\nReason: {}",
                    removed.iter().map(|a| format!("- assert {}", a.condition)).collect::<Vec<_>>().join("\n"),
                    verdict.rationale
                );
                session.audit.push(AuditEvent::Verdict {
                    verdict,
                    removed: removed.iter().map(|a| a.condition.clone()).collect(),
                });
                self.grow_contract(problem, session, &sites, Some(&feedback))?;
                session.contract.status = ContractStatus::Active;
                session.audit.push(AuditEvent::ContractReady {
                    contract_id: session.contract.id(),
                    assertions: session.contract.assertions.len(),
                    degraded: session.contract.degraded,
                });
                Ok(paired)
            }
        }
    }

    /// Records the decision; returns the rejection or conflict reason, if any.
    fn settle(&self, problem: &Problem, session: &mut Session, case_id: &str, decision: CaseDecision, queue: &mut Vec<TestCase>) -> Result<Option<String>, StgenError> {
        match decision {
            CaseDecision::Accepted(case) => {
                session.digests.insert(case.input_digest.clone().unwrap_or_default());
                session.accepted.push(case);
                Ok(None)
            }
            CaseDecision::Rejected { reason, detail } => {
                let why = format!("{reason:?}: {detail}");
                session.audit.push(AuditEvent::CaseRejected { case_id: case_id.to_string(), reason, detail });
                Ok(Some(why))
            }
            CaseDecision::Conflict(record) => {
                session.contract.conflict_count += 1;
                let why = format!("violates `{}`", record.assertion_text);
                session.audit.push(AuditEvent::Conflict {
                    contract_id: record.contract_id.clone(),
                    case_id: record.test_case_id.clone(),
                    assertion: record.assertion_text.clone(),
                    conflict_count: session.contract.conflict_count,
                });
                session.conflicts.push(record);
                if let Some(verdict) = self.maybe_invoke_judge(session) {
                    queue.extend(self.apply_verdict(problem, session, verdict)?);
                }
                Ok(Some(why))
            }
        }
    }

    /// Runs all three phases for one problem.
    pub fn run_stgen(&self, problem: &Problem) -> Result<StgenOutcome, StgenError> {
        let (target, correctness_costs) = self.choose_target(problem)?;
        let mut session = Session::new(problem, &target);
        let total = correctness_costs.as_ref().map(|c| c.iter().sum::<f64>());
        session.audit.push(AuditEvent::TargetChosen { label: target.label.clone(), correctness_cost: total });
        let med = correctness_costs.and_then(|mut c| median(&mut c));
        session.floor = med.map(|m| m * self.config.stress_factor);
        session.audit.push(AuditEvent::StressFloor { median_correctness_cost: med, floor: session.floor });

        self.generate_contract(problem, &mut session)?;

        let mut attempts = 0u32;
        let mut streak = 0u32;
        let mut feedback: Option<String> = None;
        let mut requeued: Vec<TestCase> = Vec::new();
        while session.accepted.len() < self.config.target_count {
            if let Some(case) = requeued.pop() {
                let id = case.id.clone();
                let decision = self.validate_case(problem, &mut session, case)?;
                self.settle(problem, &mut session, &id, decision, &mut requeued)?;
                continue;
            }
            if attempts >= self.config.attempt_budget {
                session.audit.push(AuditEvent::BudgetExhausted { attempts, accepted: session.accepted.len() });
                break;
            }
            attempts += 1;
            let fb = (streak > 0 && streak <= self.config.retries_per_candidate).then_some(feedback.as_deref()).flatten();
            let candidate = match self.generate_case(problem, &mut session, fb) {
                Ok(Ok(c)) => c,
                Ok(Err((id, why))) => {
                    session.audit.push(AuditEvent::CaseRejected { case_id: id, reason: RejectReason::Unparseable, detail: why.clone() });
                    streak += 1;
                    feedback = Some(why);
                    continue;
                }
                Err(e) => {
                    session.audit.push(AuditEvent::LlmFailure { phase: "case".into(), error: e.to_string() });
                    if matches!(e, LlmError::Config(_) | LlmError::InvalidRequest(_)) {
                        break;
                    }
                    continue;
                }
            };
            let id = candidate.id.clone();
            let decision = self.validate_case(problem, &mut session, candidate)?;
            match self.settle(problem, &mut session, &id, decision, &mut requeued)? {
                None => {
                    streak = 0;
                    feedback = None;
                }
                Some(why) => {
                    streak = if streak > self.config.retries_per_candidate { 1 } else { streak + 1 };
                    feedback = Some(why);
                }
            }
        }
        let diagnostic = session.accepted.is_empty().then(|| {
            format!(
                "no stressful case accepted after {attempts} attempts ({} conflicts pending, contract has {} assertions)",
                session.conflicts.len(),
                session.contract.assertions.len()
            )
        });
        Ok(StgenOutcome {
            problem_id: problem.id.clone(),
            accepted: session.accepted,
            contract: session.contract,
            attempts,
            diagnostic,
            audit: session.audit,
        })
    }
}

/// Renames accepted cases to stable suite ids.
pub fn finalize_ids(problem_id: &str, cases: &mut [TestCase]) {
    for (i, c) in cases.iter_mut().enumerate() {
        c.id = format!("{problem_id}-stress-{:02}", i + 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE_SUM: &str = "n = int(input())\nlst = []\nfor i in range(n):\n    lst.append(int(input()))\nprint(sum(lst))\n";

    #[test]
    fn figure_style_program_has_two_sites() {
        let sites = identify_input_locations(FILE_SUM).unwrap();
        assert_eq!(sites.len(), 2);
        assert_eq!((sites[0].anchor, sites[0].line), (Anchor::AfterInputStatement, 1));
        assert_eq!((sites[1].anchor, sites[1].line, sites[1].indent.as_str()), (Anchor::AfterEnclosingLoop, 4, ""));
        assert!(identify_input_locations("print(42)\n").unwrap().is_empty());
    }

    #[test]
    fn nested_loop_site_follows_the_outer_loop() {
        let src = "t = int(input())\nfor _ in range(t):\n    row = []\n    for j in range(3):\n        row.append(input())\n    print(row)\nprint('done')\n";
        let sites = identify_input_locations(src).unwrap();
        assert_eq!(sites.len(), 2);
        assert_eq!((sites[1].anchor, sites[1].line), (Anchor::AfterEnclosingLoop, 6));
    }

    #[test]
    fn instrumentation_round_trips() {
        let sites = identify_input_locations(FILE_SUM).unwrap();
        let a = vec![
            AssertionStatement::new(1, "n > 0".into(), sites[0].clone()),
            AssertionStatement::new(2, "len(lst) == n".into(), sites[1].clone()),
        ];
        let src = Contract::instrument(FILE_SUM, &a).unwrap();
        assert_eq!(
            src,
            "n = int(input())\nassert n > 0, \"STRESSBENCH-CONTRACT#1\"\nlst = []\nfor i in range(n):\n    lst.append(int(input()))\nassert len(lst) == n, \"STRESSBENCH-CONTRACT#2\"\nprint(sum(lst))\n"
        );
        assert_eq!(pysrc::strip_contract_lines(&src), FILE_SUM);
        assert_eq!(a[0].kind, AssertionKind::Scale);
    }

    #[test]
    fn function_site_is_body_start() {
        let s = function_site("def add(lst):\n    return sum(lst)\n", "add").unwrap();
        assert_eq!((s.anchor, s.line, s.indent.as_str()), (Anchor::FunctionBodyStart, 2, "    "));
    }

    #[test]
    fn median_of_costs() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
