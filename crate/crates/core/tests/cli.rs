use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stressbench::interchange::{load_problems, write_problems};
use stressbench::model::{Level, Payload, Problem, SolutionProgram, TestCase};

const GT: &str = "n = int(input())\ns = 0\nfor _ in range(n):\n    s += int(input())\nprint(s)\n";
const FAST: &str = "import sys\nprint(sum(map(int, sys.stdin.read().split()[1:])))\n";
const SLOW: &str = "n = int(input())\nxs = []\nfor _ in range(n):\n    xs.append(int(input()))\n    xs.sort()\nprint(sum(xs))\n";
const WRONG: &str = "n = int(input())\nprint(n)\n";

fn stdin_case(id: &str, n: usize) -> TestCase {
    let values: Vec<usize> = (1..=n).map(|i| i * 7 % 100).collect();
    let mut text = format!("{n}\n");
    for v in &values {
        text.push_str(&format!("{v}\n"));
    }
    TestCase::new(id, Payload::Stdin(text)).with_expected(values.iter().sum::<usize>().to_string())
}

fn problem(id: &str, gts: &[&str], stressful: bool) -> Problem {
    Problem {
        id: id.into(),
        level: Level::File,
        description: "Read n, then n integers, one per line; print their sum.".into(),
        entry_point: None,
        ground_truths: gts
            .iter()
            .enumerate()
            .map(|(i, s)| SolutionProgram::ground_truth(format!("gt{i}"), *s))
            .collect(),
        correctness_tests: vec![stdin_case("c0", 3), stdin_case("c1", 1), stdin_case("c2", 5)],
        stressful_tests: if stressful { vec![stdin_case("s0", 400)] } else { vec![] },
    }
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_benchmark(&self, name: &str, problems: &[Problem]) -> PathBuf {
        let p = self.path(name);
        write_problems(&p, problems).unwrap();
        p
    }

    fn run(&self, args: &[&str], counter: &str) -> Output {
        Command::new(env!("CARGO_BIN_EXE_stressbench"))
            .args(args)
            .current_dir(self.dir.path())
            .env("STRESSBENCH_COUNTER", counter)
            .env("STRESSBENCH_CACHE", Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-cache"))
            .env("STRESSBENCH_LOCK", self.path("lane.lock"))
            .env_remove("STRESSBENCH_LLM_MOCK")
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_layered_default() {
    let env = Env::new();
    let out = env.run(&["--help"], "auto");
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in [
        "--runs", "[default: 12]", "--top-k-cases", "[default: 5]", "--generated-cases", "[default: 20]",
        "--judge-threshold", "--contract-max-iters", "[default: 8]", "--seed", "[default: 0]",
        "--correctness-time-limit", "[default: 10]", "--measurement-time-limit", "--memory-limit-mb",
        "[default: 1024]", "--config", "--mock-script", "validate", "generate", "evaluate", "probe", "report",
    ] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    let eval = stdout(&env.run(&["evaluate", "--help"], "auto"));
    assert!(eval.contains("[default: 1]") && eval.contains("[default: evaluation]"), "{eval}");
}

#[test]
fn validate_reports_removals_and_exit_codes() {
    let env = Env::new();
    let clean = env.write_benchmark("clean.json", &[problem("a", &[GT], false)]);
    let out = env.run(&["validate", clean.to_str().unwrap(), "--report", "r1.json"], "auto");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 removed, 0 ground truths removed"));

    let broken = env.write_benchmark("broken.json", &[problem("a", &[GT, WRONG], false), problem("b", &[WRONG], false)]);
    let out = env.run(
        &["validate", broken.to_str().unwrap(), "--report", "r2.json", "--output", "valid.json", "--seed", "9"],
        "auto",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("a: removed gt1"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(env.path("r2.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 9);
    assert_eq!(report["report"]["removed_solutions"], 2);
    assert_eq!(report["report"]["removed_problems"], 1);
    let kept = load_problems(env.path("valid.json")).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].ground_truths.len(), 1);

    let out = env.run(&["validate", "missing.json"], "auto");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_input_errors_exit_with_two() {
    let env = Env::new();
    let bench = env.write_benchmark("b.json", &[problem("sum", &[GT], true)]);
    let b = bench.to_str().unwrap();
    fs::write(env.path("empty.json"), "{}").unwrap();
    fs::write(env.path("unknown.json"), r#"{"nope": ["print(1)"], "other": ["print(2)"]}"#).unwrap();
    fs::write(env.path("one.json"), serde_json::json!({ "sum": [FAST] }).to_string()).unwrap();

    let out = env.run(&["evaluate", b, "empty.json"], "valgrind");
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = env.run(&["evaluate", b, "unknown.json"], "valgrind");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope") && stderr(&out).contains("other"), "{}", stderr(&out));
    let out = env.run(&["evaluate", b, "one.json", "--k", "1,2"], "valgrind");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("k=2"), "{}", stderr(&out));
}

#[test]
fn evaluate_fast_slow_wrong_end_to_end() {
    let env = Env::new();
    let bench = env.write_benchmark("b.json", &[problem("sum", &[GT], true)]);
    let cands = serde_json::json!({ "sum": [
        { "label": "fast", "source": FAST },
        { "label": "slow", "source": SLOW },
        { "label": "wrong", "source": WRONG },
    ]});
    fs::write(env.path("cands.json"), cands.to_string()).unwrap();
    let out = env.run(&["evaluate", bench.to_str().unwrap(), "cands.json", "--runs", "3", "--seed", "4"], "valgrind");
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("66.67"), "{table}");
    assert!(table.contains("33.33 (50.00%)"), "{table}");

    let report_path = env.path("evaluation").join("report.json");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["problems"][0]["c"], 2);
    assert_eq!(report["problems"][0]["c_f"], 1);
    assert_eq!(report["provenance"]["seed"], 4);
    assert_eq!(report["provenance"]["measurement"]["backend"], "valgrind");

    let shown = env.run(&["report", report_path.to_str().unwrap()], "auto");
    assert!(shown.status.success());
    assert_eq!(stdout(&shown), table);

    // Everything is in the ledger; a resume executes nothing and agrees.
    let again = env.run(&["evaluate", bench.to_str().unwrap(), "cands.json", "--runs", "3", "--seed", "4", "--resume"], "valgrind");
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&again), table);
    let changed = env.run(&["evaluate", bench.to_str().unwrap(), "cands.json", "--runs", "4", "--resume"], "valgrind");
    assert_eq!(changed.status.code(), Some(2));
    assert!(stderr(&changed).contains("refusing to resume"));
}

#[test]
fn probe_reports_backend_and_baseline() {
    let env = Env::new();
    let out = env.run(&["probe"], "valgrind");
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("selected backend: valgrind"), "{text}");
    assert!(text.contains("perf-event: "), "{text}");
    let baseline: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("baseline (file): "))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| panic!("no baseline in {text}"));
    assert!(baseline > 0);
}

#[test]
fn measuring_commands_need_a_counter() {
    if std::fs::read_to_string("/proc/sys/kernel/perf_event_paranoid").is_ok()
        && stressbench::perf::PerfEventCounter::probe().is_ok()
    {
        return; // hardware counters work here; nothing to deny
    }
    let env = Env::new();
    let bench = env.write_benchmark("b.json", &[problem("sum", &[GT], false)]);
    fs::write(env.path("mock.json"), r#"{"default": "NONE"}"#).unwrap();
    let out = env.run(&["generate", bench.to_str().unwrap(), "--mock-script", "mock.json"], "perf-event");
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stdout(&out).contains("perf-event: unavailable"));
}

fn mock_script() -> String {
    let mut contract = vec!["assert n > 0".to_string()];
    contract.extend(std::iter::repeat_n("NONE".to_string(), 12));
    serde_json::json!({
        "queues": { "contract": contract },
        "default": "def generate():\n    n = random.randint(300, 600)\n    return str(n) + \"\\n\" + \"\\n\".join(str(random.randint(1, 99)) for _ in range(n)) + \"\\n\"\n",
    })
    .to_string()
}

#[test]
fn generate_with_mock_builds_suites_and_is_idempotent() {
    let env = Env::new();
    let bench = env.write_benchmark("b.json", &[problem("sum", &[GT], false)]);
    fs::write(env.path("mock.json"), mock_script()).unwrap();
    let args = [
        "generate", bench.to_str().unwrap(), "--mock-script", "mock.json", "--out-dir", "gen",
        "--generated-cases", "6", "--runs", "3", "--seed", "2",
    ];
    let out = env.run(&args, "valgrind");
    assert!(out.status.success(), "{}\n{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("sum: 6 generated, 5 kept"), "{}", stdout(&out));
    let built = load_problems(env.path("gen").join("benchmark.json")).unwrap();
    assert_eq!(built[0].stressful_tests.len(), 5);
    assert!(built[0].stressful_tests.iter().all(|t| t.expected_output.is_some()));
    let audit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(env.path("gen").join("audit").join("sum.json")).unwrap()).unwrap();
    assert_eq!(audit["seed"], 2);
    assert!(env.path("gen").join("transcripts").join("sum").join("contract.jsonl").exists());

    let rerun = [
        "generate", "gen/benchmark.json", "--mock-script", "mock.json", "--out-dir", "gen2", "--generated-cases", "6",
        "--runs", "3",
    ];
    let out = env.run(&rerun, "valgrind");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sum: skipped"), "{}", stdout(&out));
    assert_eq!(load_problems(env.path("gen2").join("benchmark.json")).unwrap(), built);

    let mut forced = rerun.to_vec();
    forced.push("--force");
    let out = env.run(&forced, "valgrind");
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("sum: 6 generated, 5 kept"));
}
