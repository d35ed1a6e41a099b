//! Scripted-model fixture for pipeline tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use stressbench::llm::prompts::Prompts;
use stressbench::llm::{ChatRequest, Client, FnProvider, Phase, ProviderError};
use stressbench::model::{Level, Payload, Problem, SolutionProgram, TestCase};
use stressbench::sandbox::{ExecutionRequest, Limits, Sandbox, SandboxConfig, Status};
use stressbench::stgen::{AuditEvent, RejectReason, Stgen, StgenConfig, StgenOutcome};

pub const ADD: &str = "def add(lst):\n    return sum(lst)\n";
pub const FILE_SUM: &str = "n = int(input())\nlst = []\nfor i in range(n):\n    lst.append(int(input()))\nprint(sum(lst))\n";

pub fn function_problem(source: &str) -> Problem {
    Problem {
        id: "add".into(),
        level: Level::Function,
        description: "Return the sum of a list of integers.".into(),
        entry_point: Some("add".into()),
        ground_truths: vec![SolutionProgram::ground_truth("gt0", source)],
        correctness_tests: vec![
            TestCase::new("c0", Payload::Args(vec![serde_json::json!([1, 2, 3])])).with_expected("6"),
            TestCase::new("c1", Payload::Args(vec![serde_json::json!([5, 5])])).with_expected("10"),
            TestCase::new("c2", Payload::Args(vec![serde_json::json!([7])])).with_expected("7"),
        ],
        stressful_tests: vec![],
    }
}

pub fn file_problem() -> Problem {
    Problem {
        id: "filesum".into(),
        level: Level::File,
        description: "Read n and then n integers; print their sum.".into(),
        entry_point: None,
        ground_truths: vec![SolutionProgram::ground_truth("gt0", FILE_SUM)],
        correctness_tests: vec![
            TestCase::new("c0", Payload::Stdin("3\n2\n3\n4\n".into())).with_expected("9"),
            TestCase::new("c1", Payload::Stdin("1\n8\n".into())).with_expected("8"),
        ],
        stressful_tests: vec![],
    }
}

/// Cost proportional to input size, read off the payload.
pub fn size_cost(req: &ExecutionRequest<'_>) -> Result<f64, String> {
    let num = |re: &str, s: &str| {
        Regex::new(re).unwrap().captures(s).map(|c| c[1].parse::<f64>().unwrap())
    };
    Ok(match &req.test.payload {
        Payload::Args(a) => a[0].as_array().map_or(1, |v| v.len()) as f64,
        Payload::Stdin(s) => s.lines().count() as f64,
        Payload::Expressions(e) => num(r"range\((\d+)\)", &e[0]).unwrap_or(1.0),
        Payload::Generator(g) => num(r"n = (\d+)", g).unwrap_or(1.0),
    })
}

pub type Script = dyn Fn(&ChatRequest, usize) -> String + Send + Sync;

pub struct Fixture {
    pub sandbox: Sandbox,
    client: Client,
    prompts: Prompts,
    calls: Arc<Mutex<Vec<Phase>>>,
}

impl Fixture {
    pub fn new(contract: Box<Script>, case: Box<Script>, judge: Box<Script>) -> Self {
        let calls: Arc<Mutex<Vec<Phase>>> = Arc::default();
        let seen = calls.clone();
        let counters: Arc<[AtomicUsize; 3]> = Arc::default();
        let provider = FnProvider::new("scripted", move |req: &ChatRequest| -> Result<String, ProviderError> {
            seen.lock().unwrap().push(req.tag.phase);
            let (slot, f) = match req.tag.phase {
                Phase::Contract => (0, &contract),
                Phase::Case => (1, &case),
                _ => (2, &judge),
            };
            let n = counters[slot].fetch_add(1, Ordering::SeqCst);
            Ok(f(req, n))
        });
        Self {
            sandbox: Sandbox::new(SandboxConfig::default()).unwrap(),
            client: Client::new(Arc::new(provider)),
            prompts: Prompts::default(),
            calls,
        }
    }

    pub fn run(&self, problem: &Problem, config: StgenConfig) -> StgenOutcome {
        let stgen = Stgen {
            sandbox: &self.sandbox,
            llm: &self.client,
            prompts: &self.prompts,
            cost: Some(&size_cost),
            config,
        };
        stgen.run_stgen(problem).unwrap()
    }

    pub fn judge_calls(&self) -> usize {
        self.calls.lock().unwrap().iter().filter(|p| **p == Phase::Judge).count()
    }
}

pub fn prompt(req: &ChatRequest) -> &str {
    &req.messages.last().unwrap().content
}

pub fn sized_expression(_: &ChatRequest, n: usize) -> String {
    format!("[\"[random.randint(1, 100) for _ in range({})]\"]", 1000 + 37 * n)
}

pub fn never(_: &ChatRequest, _: usize) -> String {
    panic!("unexpected model call")
}

pub fn reexecute_all_ok(sandbox: &Sandbox, problem: &Problem, out: &StgenOutcome) {
    let program = SolutionProgram::ground_truth("instrumented", out.contract.instrumented_source.clone());
    for case in &out.accepted {
        let r = sandbox.execute(&ExecutionRequest {
            program: &program,
            level: problem.level,
            entry_point: problem.entry_point.as_deref(),
            test: case,
            limits: Limits::MEASUREMENT,
        });
        assert_eq!(r.status, Status::Ok, "case {} stderr: {}", case.id, r.stderr);
        assert_eq!(Some(r.output(problem.level)), case.expected_output.as_deref());
    }
}

pub fn rejections(out: &StgenOutcome, reason: RejectReason) -> usize {
    out.audit
        .events
        .iter()
        .filter(|e| matches!(e, AuditEvent::CaseRejected { reason: r, .. } if *r == reason))
        .count()
}

pub fn dummy_request() -> ChatRequest {
    ChatRequest {
        messages: vec![],
        temperature: 0.0,
        max_tokens: 1,
        model_id: String::new(),
        tag: stressbench::llm::RequestTag { problem_id: String::new(), phase: Phase::Case },
    }
}
