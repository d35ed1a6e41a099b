//! Acceptance checks, one PASS/FAIL line each. Runs without the libtest harness
//! so the lines come out in order; exits non-zero if any check fails.

// `ensure!` negates float comparisons on purpose: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use stressbench::assembly::assemble_top;
use stressbench::evaluator::{EvalConfig, EvaluationJob, Evaluator, Measurer};
use stressbench::metrics::{efficient_at_k, pass_at_k, pearson, rsd};
use stressbench::model::{Level, Payload, Problem, SolutionProgram, TestCase};
use stressbench::perf::{
    Backend, InstructionCounter, MeasurementRecord, Meter, MeterError, PerfEventCounter, Provenance,
    ScriptedCounter, ScriptedSample, ValgrindCounter, trimmed_mean,
};
use stressbench::sandbox::{ExecutionRequest, Limits, Sandbox, SandboxConfig};
use stressbench::stgen::{ContractStatus, StgenConfig};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    if took > budget {
        Err(format!("took {took:.1?}, budget {budget:?}"))
    } else {
        Ok(took)
    }
}

// ---------------------------------------------------------------- metrics

fn subset_probability(n: u32, good: u32, k: u32) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != k {
            continue;
        }
        total += 1;
        if mask & ((1 << good) - 1) != 0 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn metric_oracle() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 1..=10u32 {
        for c in 0..=n {
            for k in 1..=n {
                let want = subset_probability(n, c, k);
                let p = pass_at_k(n.into(), c.into(), k.into()).map_err(|e| e.to_string())?;
                let e = efficient_at_k(n.into(), c.into(), k.into()).map_err(|e| e.to_string())?;
                worst = worst.max((p - want).abs()).max((e - want).abs());
                cases += 1;
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("{cases} (n,c,k) triples, max deviation {worst:e}, {took:.2?}"))
}

// ---------------------------------------------------------------- measurement

fn real_counter() -> Box<dyn InstructionCounter> {
    match PerfEventCounter::probe() {
        Ok(c) => Box::new(c),
        Err(_) => Box::new(ValgrindCounter::probe(None).expect("no instruction counter available")),
    }
}

fn real_meter() -> Meter {
    let sandbox = Arc::new(Sandbox::new(SandboxConfig::default()).unwrap());
    Meter::new(sandbox, real_counter()).with_cache_dir(Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache"))
}

fn empty_stdin() -> TestCase {
    TestCase::new("t", Payload::Stdin(String::new()))
}

/// Drops one minimum and one maximum, as the aggregation does.
fn retained(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s[1..s.len() - 1].to_vec()
}

struct Campaign {
    records: Vec<MeasurementRecord>,
    took: Duration,
}

/// Ten loop programs of 200 to 200,000 iterations, each under the 12-run protocol.
fn campaign(meter: &Meter) -> Result<Campaign, String> {
    let start = Instant::now();
    let work: Vec<u64> = (0..10).map(|i| (200.0 * 1000f64.powf(i as f64 / 9.0)).round() as u64).collect();
    let mut records = Vec::new();
    for &n in &work {
        let rec = meter
            .measure_stable(&loop_program(n), Level::File, None, &empty_stdin(), 12, Limits::MEASUREMENT)
            .map_err(|e| e.to_string())?;
        ensure!(!rec.is_failed(), "loop{n}: {}", rec.failed.unwrap_or_default());
        records.push(rec);
    }
    Ok(Campaign { records, took: start.elapsed() })
}

fn stability(c: &Campaign) -> Check {
    ensure!(c.took <= Duration::from_secs(300), "took {:.1?}, budget 5 min", c.took);
    let (mut ic_sum, mut wall_sum, mut worst_ic) = (0.0, 0.0, 0.0f64);
    for rec in &c.records {
        let ic: Vec<f64> = rec.samples_ic.iter().map(|&n| n as f64).collect();
        let ic_rsd = rsd(&retained(&ic)).map_err(|e| e.to_string())?;
        let wall_rsd = rsd(&retained(&rec.samples_wall)).map_err(|e| e.to_string())?;
        ensure!(ic_rsd <= 0.1, "{}: instruction RSD {ic_rsd:.4}% > 0.1%", rec.program_label);
        worst_ic = worst_ic.max(ic_rsd);
        ic_sum += ic_rsd;
        wall_sum += wall_rsd;
    }
    let n = c.records.len() as f64;
    let (ic_mean, wall_mean) = (ic_sum / n, wall_sum / n);
    ensure!(ic_mean * 20.0 <= wall_mean, "mean instruction RSD {ic_mean:.4}% vs wall {wall_mean:.4}%");
    Ok(format!(
        "{} programs x 12 runs on {}: instruction RSD mean {ic_mean:.4}% (max {worst_ic:.4}%), wall RSD mean {wall_mean:.3}%, {:.0?}",
        c.records.len(),
        c.records[0].provenance.backend.name(),
        c.took
    ))
}

fn loop_program(n: u64) -> SolutionProgram {
    SolutionProgram::candidate(format!("loop{n}"), format!("s = 0\nfor i in range({n}):\n    s += i * i % 7\nprint(s)\n"))
}

/// Round-robin over the programs, one counted run each per round, so a burst
/// of machine noise lands on at most one sample per program and is trimmed.
fn linearity(meter: &Meter) -> Check {
    const ROUNDS: usize = 7;
    let start = Instant::now();
    let work: Vec<u64> = (0..10).map(|i| (1000.0 * 1000f64.powf(i as f64 / 9.0)).round() as u64).collect();
    let programs: Vec<SolutionProgram> = work.iter().map(|&n| loop_program(n)).collect();
    let test = empty_stdin();
    let mut ic = vec![Vec::new(); programs.len()];
    let mut wall = vec![Vec::new(); programs.len()];
    for _ in 0..ROUNDS {
        for (i, program) in programs.iter().enumerate() {
            let req = ExecutionRequest {
                program,
                level: Level::File,
                entry_point: None,
                test: &test,
                limits: Limits::MEASUREMENT,
            };
            let counted = meter.count_instructions(&req).map_err(|e| e.to_string())?;
            let n = counted.instructions.ok_or_else(|| format!("{}: {:?}", program.label, counted.result.status))?;
            ic[i].push(n as f64);
            wall[i].push(counted.wall);
        }
    }
    let took = within(start, Duration::from_secs(300))?;
    let ic: Vec<f64> = ic.iter().map(|s| trimmed_mean(s).unwrap()).collect();
    let wall: Vec<f64> = wall.iter().map(|s| trimmed_mean(s).unwrap()).collect();
    let span = work[9] as f64 / work[0] as f64;
    ensure!(span >= 999.0, "work spans only {span}x");
    let r = pearson(&ic, &wall).map_err(|e| e.to_string())?;
    ensure!(r >= 0.95, "pearson {r:.4} < 0.95 (ic {ic:?}, wall {wall:?})");
    Ok(format!(
        "pearson {r:.4} over {span:.0}x work ({} to {} iterations, {ROUNDS} interleaved runs each), {took:.0?}",
        work[0], work[9]
    ))
}

fn protocol() -> Check {
    let sandbox = Arc::new(Sandbox::new(SandboxConfig::default()).unwrap());
    let program = SolutionProgram::candidate("p", "print(1)\n");
    let test = empty_stdin();
    let scripted = |samples: Vec<ScriptedSample>| {
        Meter::new(sandbox.clone(), Box::new(ScriptedCounter::new(samples))).with_fixed_baseline(Level::File, 0)
    };
    let rec = scripted((1..=12).map(ScriptedSample::Count).collect())
        .measure_stable(&program, Level::File, None, &test, 12, Limits::MEASUREMENT)
        .map_err(|e| e.to_string())?;
    ensure!(rec.aggregate_ic == Some(6.5), "aggregate {:?}", rec.aggregate_ic);
    let mut samples: Vec<_> = (1..=12).map(ScriptedSample::Count).collect();
    samples[5] = ScriptedSample::Timeout;
    let rec = scripted(samples)
        .measure_stable(&program, Level::File, None, &test, 12, Limits::MEASUREMENT)
        .map_err(|e| e.to_string())?;
    ensure!(rec.is_failed() && rec.aggregate_ic.is_none(), "timeout did not fail the record");
    Ok("1..12 -> 6.5; one timeout -> failed".into())
}

// ---------------------------------------------------------------- generation

fn stgen_pipeline() -> Check {
    let start = Instant::now();

    let fx = Fixture::new(
        Box::new(|_, n| if n == 0 { "assert isinstance(lst, list)".into() } else { "NONE".into() }),
        Box::new(sized_expression),
        Box::new(never),
    );
    let p = function_problem(ADD);
    let out = fx.run(&p, StgenConfig::default());
    ensure!(out.accepted.len() == 20, "function level accepted {}", out.accepted.len());
    reexecute_all_ok(&fx.sandbox, &p, &out);

    let fx = Fixture::new(
        Box::new(|req, _| {
            let p = prompt(req);
            if p.contains("- assert ") { "NONE".into() } else { "assert n > 0".into() }
        }),
        Box::new(|_, n| {
            format!(
                "def generate():\n    n = {}\n    return str(n) + \"\\n\" + \"\\n\".join(str(random.randint(1, 9)) for _ in range(n)) + \"\\n\"\n",
                2000 + 11 * n
            )
        }),
        Box::new(never),
    );
    let p = file_problem();
    let out = fx.run(&p, StgenConfig::default());
    ensure!(out.accepted.len() == 20, "file level accepted {}", out.accepted.len());
    reexecute_all_ok(&fx.sandbox, &p, &out);

    // Three assertions; the middle one rejects every stressful input.
    let fx = Fixture::new(
        Box::new(|req, _| {
            let p = prompt(req);
            if p.contains("judged wrong") {
                "NONE".into()
            } else if !p.contains("- assert ") {
                "assert isinstance(lst, list)".into()
            } else if !p.contains("len(lst) < 50") {
                "assert len(lst) < 50".into()
            } else if !p.contains("all(x >= 1") {
                "assert all(x >= 1 for x in lst)".into()
            } else {
                "NONE".into()
            }
        }),
        Box::new(sized_expression),
        Box::new(|_, _| r#"{"verdict": "contract_invalid", "assertions": [1], "rationale": "too strict"}"#.into()),
    );
    let p = function_problem(ADD);
    let out = fx.run(&p, StgenConfig { target_count: 8, ..Default::default() });
    ensure!(out.audit.judge_invocations() == [5], "judge fired at {:?}", out.audit.judge_invocations());
    ensure!(fx.judge_calls() == 1, "{} judge calls", fx.judge_calls());
    let conds: Vec<_> = out.contract.assertions.iter().map(|a| a.condition.as_str()).collect();
    ensure!(
        conds == ["isinstance(lst, list)", "all(x >= 1 for x in lst)"],
        "contract after contract_invalid: {conds:?}"
    );

    let fx = Fixture::new(
        Box::new(|_, n| if n == 0 { "assert len(lst) < 50".into() } else { "NONE".into() }),
        Box::new(|_, n| {
            if n < 12 {
                sized_expression(&dummy_request(), n)
            } else {
                format!("[\"[random.randint(1, 9) for _ in range({})]\"]", 40 + n % 5)
            }
        }),
        Box::new(|_, _| r#"{"verdict": "testcase_invalid", "assertions": [], "rationale": "inputs too long"}"#.into()),
    );
    let out = fx.run(&function_problem(ADD), StgenConfig { target_count: 3, stress_factor: 0.0, ..Default::default() });
    ensure!(out.contract.status == ContractStatus::JudgeValidated, "status {:?}", out.contract.status);
    ensure!(
        fx.judge_calls() == 1,
        "validated contract judged {} times after 12 conflicting cases",
        fx.judge_calls()
    );

    let took = within(start, Duration::from_secs(120))?;
    Ok(format!(
        "20 function-level + 20 file-level cases re-execute ok; judge at 5th conflict; validated contract not re-judged; {took:.1?}"
    ))
}

fn provenance() -> Provenance {
    Provenance {
        backend: Backend::Scripted,
        cpu_model: "fixture".into(),
        pinned_cpu: None,
        scope: "fixture".into(),
        runner_version: "fixture".into(),
        machine: "fixture".into(),
    }
}

fn record(label: &str, test: &str, ic: f64) -> MeasurementRecord {
    MeasurementRecord {
        program_label: label.into(),
        test_id: test.into(),
        input_digest: None,
        samples_ic: vec![ic as i64; 12],
        samples_wall: vec![0.0; 12],
        aggregate_ic: Some(ic),
        aggregate_wall: Some(0.0),
        baseline_ic: 0,
        failed: None,
        provenance: provenance(),
    }
}

fn assembly() -> Check {
    let p = function_problem(ADD);
    // 20 distinct aggregates in a scrambled order.
    let candidates: Vec<_> = (0..20u32)
        .map(|i| {
            let id = format!("c{i:02}");
            (TestCase::new(&id, Payload::Args(vec![])), record("gt0", &id, f64::from((i * 7) % 20 + 1) * 100.0))
        })
        .collect();
    let mut want: Vec<_> = candidates.iter().map(|(t, m)| (m.aggregate_ic.unwrap(), t.id.clone())).collect();
    want.sort_by(|a, b| b.0.total_cmp(&a.0));
    let want: Vec<String> = want.into_iter().take(5).map(|(_, id)| id).collect();
    let got: Vec<String> =
        assemble_top(&p, &candidates, 5).problem.stressful_tests.into_iter().map(|t| t.id).collect();
    ensure!(got == want, "suite {got:?}, expected {want:?}");

    let tied: Vec<_> = ["b", "a", "d", "c", "e", "f"]
        .iter()
        .map(|id| (TestCase::new(*id, Payload::Args(vec![])), record("gt0", id, 500.0)))
        .collect();
    let got: Vec<String> = assemble_top(&p, &tied, 5).problem.stressful_tests.into_iter().map(|t| t.id).collect();
    ensure!(got == ["a", "b", "c", "d", "e"], "tied suite {got:?}");
    Ok(format!("top 5 of 20 in descending order: {want:?}; ties by id"))
}

// ---------------------------------------------------------------- distinguishability

const SORT_FAST: &str = "n = int(input())\nxs = list(map(int, input().split()))\nprint(' '.join(map(str, sorted(xs))))\n";
const SORT_QUADRATIC: &str = "n = int(input())\nxs = list(map(int, input().split()))\nfor i in range(1, n):\n    v = xs[i]\n    j = i - 1\n    while j >= 0 and xs[j] > v:\n        xs[j + 1] = xs[j]\n        j -= 1\n    xs[j + 1] = v\nprint(' '.join(map(str, xs)))\n";

fn sort_case(id: &str, n: usize, seed: u64) -> TestCase {
    let mut state = seed;
    let xs: Vec<u64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 10_000
        })
        .collect();
    let mut sorted = xs.clone();
    sorted.sort_unstable();
    let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    TestCase::new(id, Payload::Stdin(format!("{n}\n{}\n", join(&xs)))).with_expected(join(&sorted))
}

fn summed(meter: &Meter, program: &SolutionProgram, tests: &[TestCase]) -> Result<f64, String> {
    let mut total = 0.0;
    for t in tests {
        let rec = meter
            .measure_stable(program, Level::File, None, t, 3, Limits::MEASUREMENT)
            .map_err(|e| e.to_string())?;
        total += rec.aggregate_ic.ok_or_else(|| format!("{} on {}: {:?}", program.label, t.id, rec.failed))?;
    }
    Ok(total)
}

fn distinguishability(meter: &Meter) -> Check {
    let gt = SolutionProgram::ground_truth("n-log-n", SORT_FAST);
    let quadratic = SolutionProgram::candidate("quadratic", SORT_QUADRATIC);
    let problem = Problem {
        id: "sort".into(),
        level: Level::File,
        description: "Sort n integers.".into(),
        entry_point: None,
        ground_truths: vec![gt.clone()],
        correctness_tests: vec![sort_case("c0", 1, 1), sort_case("c1", 3, 2), sort_case("c2", 5, 3)],
        stressful_tests: vec![],
    };
    let mut candidates = Vec::new();
    for (i, n) in [20usize, 60, 100, 140, 180, 220, 260].into_iter().enumerate() {
        let case = sort_case(&format!("s{i}"), n, 100 + i as u64);
        let rec = meter
            .measure_stable(&gt, Level::File, None, &case, 3, Limits::MEASUREMENT)
            .map_err(|e| e.to_string())?;
        candidates.push((case, rec));
    }
    let suite = assemble_top(&problem, &candidates, 5).problem.stressful_tests;
    ensure!(suite.len() == 5, "suite has {} cases", suite.len());

    let correctness = [summed(meter, &gt, &problem.correctness_tests)?, summed(meter, &quadratic, &problem.correctness_tests)?];
    let stressful = [summed(meter, &gt, &suite)?, summed(meter, &quadratic, &suite)?];
    let rsd_c = rsd(&correctness).map_err(|e| e.to_string())?;
    let rsd_s = rsd(&stressful).map_err(|e| e.to_string())?;
    ensure!(rsd_s > rsd_c, "stressful RSD {rsd_s:.2}% <= correctness RSD {rsd_c:.2}%");
    ensure!(stressful[1] > stressful[0], "quadratic {} <= n log n {}", stressful[1], stressful[0]);
    Ok(format!(
        "RSD stressful {rsd_s:.2}% > correctness {rsd_c:.2}%; quadratic/n-log-n = {:.2}",
        stressful[1] / stressful[0]
    ))
}

// ---------------------------------------------------------------- evaluator

const SUM_GT: &str = "n = int(input())\ns = 0\nfor _ in range(n):\n    s += int(input())\nprint(s)\n";
const SUM_FAST: &str = "import sys\nprint(sum(map(int, sys.stdin.read().split()[1:])))\n";
const SUM_SLOW: &str = "n = int(input())\nxs = [int(input()) for _ in range(n)]\nprint(sum(sorted(xs)))\n";
const SUM_WRONG: &str = "n = int(input())\nprint(n)\n";

/// Aggregate counts as a multiple of the ground truth's.
struct Multiples(HashMap<String, f64>);

const G: f64 = 1_000_000.0;

impl Measurer for Multiples {
    fn measure(
        &self,
        _problem: &Problem,
        program: &SolutionProgram,
        test: &TestCase,
        _runs: usize,
        _limits: Limits,
    ) -> Result<MeasurementRecord, MeterError> {
        Ok(record(&program.label, &test.id, self.0[&program.label] * G))
    }

    fn provenance(&self) -> Provenance {
        provenance()
    }
}

fn stdin_sum(id: &str, n: i64) -> TestCase {
    let body: String = (1..=n).map(|i| format!("{i}\n")).collect();
    TestCase::new(id, Payload::Stdin(format!("{n}\n{body}"))).with_expected((n * (n + 1) / 2).to_string())
}

fn evaluator() -> Check {
    let problem = Problem {
        id: "sum".into(),
        level: Level::File,
        description: "sum".into(),
        entry_point: None,
        ground_truths: vec![SolutionProgram::ground_truth("gt", SUM_GT)],
        correctness_tests: vec![stdin_sum("c0", 3), stdin_sum("c1", 1)],
        stressful_tests: vec![stdin_sum("s0", 300)],
    };
    let candidates: BTreeMap<String, Vec<SolutionProgram>> = BTreeMap::from([(
        "sum".to_string(),
        vec![
            SolutionProgram::candidate("half", SUM_FAST),
            SolutionProgram::candidate("double", SUM_SLOW),
            SolutionProgram::candidate("wrong", SUM_WRONG),
        ],
    )]);
    let job = EvaluationJob { problems: vec![problem], candidates, config: EvalConfig::default(), output_dir: None };
    let measurer = Multiples(HashMap::from([
        ("gt".to_string(), 1.0),
        ("half".to_string(), 0.5),
        ("double".to_string(), 2.0),
    ]));
    let sandbox = Sandbox::new(SandboxConfig::default()).unwrap();
    let report = Evaluator::new(&sandbox, &measurer).evaluate(&job).map_err(|e| e.to_string())?;
    let p = report.problem("sum").ok_or("no report for sum")?;
    let want_eff = pass_at_k(3, 1, 1).unwrap();
    ensure!(p.c == 2 && p.c_f == Some(1), "c={} c_f={:?}", p.c, p.c_f);
    ensure!((p.efficient_at_k[&1] - want_eff).abs() < 1e-12, "efficient@1 {}", p.efficient_at_k[&1]);
    ensure!((want_eff - 1.0 / 3.0).abs() < 1e-12, "pass_at_k(3,1,1) = {want_eff}");
    ensure!(p.speedup == Some(2.0), "speedup {:?}", p.speedup);
    Ok(format!("c=2, c_f=1, efficient@1={:.6}, speedup={:.1}", p.efficient_at_k[&1], p.speedup.unwrap()))
}

// ---------------------------------------------------------------- driver

fn report(name: &str, check: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(why) => {
            println!("FAIL {name}: {why}");
            false
        }
    }
}

fn main() {
    // libtest-style filters: `cargo test --test acceptance -- --list` lists nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= report("metric oracle equivalence", metric_oracle);
    let meter = real_meter();
    ok &= report("measurement stability", || stability(&campaign(&meter)?));
    ok &= report("linearity", || linearity(&meter));
    ok &= report("protocol exactness", protocol);
    ok &= report("stgen pipeline", stgen_pipeline);
    ok &= report("assembly", assembly);
    ok &= report("distinguishability direction", || distinguishability(&meter));
    ok &= report("evaluator end-to-end", evaluator);
    if !ok {
        std::process::exit(1);
    }
}
