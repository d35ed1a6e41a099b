use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use stressbench::config::{Overrides, Settings};
use stressbench::evaluator::{render_summary, EvalError, EvaluationJob, Evaluator, MetricReport};
use stressbench::interchange::{load_problems, write_problems};
use stressbench::llm::{client_from_env, prompts::Prompts, Client, MockProvider};
use stressbench::model::Level;
use stressbench::perf::{
    acquire_machine_lock, default_lock_path, first_allowed_cpu, select_counter, MachineLock, Meter,
    PerfEventCounter, ValgrindCounter,
};
use stressbench::pipeline::SuiteBuilder;
use stressbench::sandbox::{Sandbox, SandboxConfig};
use stressbench::stgen::Stgen;
use stressbench::validation::{validate_problem, ValidationReport};

/// Stressful test generation and instruction-count efficiency benchmarking.
///
/// Layered settings resolve as: flag, then --config file, then built-in default.
#[derive(Parser)]
#[command(name = "stressbench", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML settings file [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Measurement repetitions per program and test [default: 12]
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Stressful cases kept per problem [default: 5]
    #[arg(long, global = true)]
    top_k_cases: Option<usize>,
    /// Stressful cases generated per problem [default: 20]
    #[arg(long, global = true)]
    generated_cases: Option<usize>,
    /// Conflicts that trigger the judge [default: 5]
    #[arg(long, global = true)]
    judge_threshold: Option<u32>,
    /// Contract generation rounds per problem [default: 8]
    #[arg(long, global = true)]
    contract_max_iters: Option<usize>,
    /// Seconds per correctness run [default: 10]
    #[arg(long, global = true)]
    correctness_time_limit: Option<f64>,
    /// Seconds per stressful run and per single measurement [default: 5]
    #[arg(long, global = true)]
    measurement_time_limit: Option<f64>,
    /// Memory limit per run in MiB [default: 1024]
    #[arg(long, global = true)]
    memory_limit_mb: Option<u64>,
    /// Scripted model replies (JSON) instead of a live endpoint [default: none]
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Model id sent to the endpoint [default: $STRESSBENCH_LLM_MODEL or gpt-4o]
    #[arg(long, global = true)]
    model: Option<String>,
    /// Directory overriding the prompt templates [default: built-in]
    #[arg(long, global = true)]
    prompts_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Remove ground truths that fail their tests or touch files.
    Validate {
        benchmark: PathBuf,
        /// Validation report path
        #[arg(long, default_value = "validation-report.json")]
        report: PathBuf,
        /// Write the surviving problems here
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate, measure and select stressful suites.
    Generate {
        benchmark: PathBuf,
        /// Directory for the new benchmark, audits and transcripts
        #[arg(long, default_value = "generated")]
        out_dir: PathBuf,
        /// Regenerate problems that already have a full suite
        #[arg(long, default_value_t = false)]
        force: bool,
    },
    /// Score candidate solutions.
    Evaluate {
        benchmark: PathBuf,
        /// JSON object: problem id -> list of sources
        candidates: PathBuf,
        /// k values, comma separated
        #[arg(long, value_delimiter = ',', default_value = "1")]
        k: Vec<u64>,
        /// Directory for the ledger, cache, audit log and report
        #[arg(long, default_value = "evaluation")]
        out_dir: PathBuf,
        /// Continue from the ledger in --out-dir
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Resume even though the configuration changed
        #[arg(long, default_value_t = false)]
        allow_config_change: bool,
    },
    /// Report counter backends, CPU pinning and baselines.
    Probe,
    /// Print the summary of a saved report.
    Report { report: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(m: impl Into<String>) -> Self {
        Self { code: 2, message: m.into() }
    }
    fn infra(m: impl Into<String>) -> Self {
        Self { code: 1, message: m.into() }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let overrides = Overrides {
        seed: g.seed,
        runs: g.runs,
        top_k_cases: g.top_k_cases,
        generated_cases: g.generated_cases,
        judge_threshold: g.judge_threshold,
        contract_max_iters: g.contract_max_iters,
        correctness_time_limit: g.correctness_time_limit,
        measurement_time_limit: g.measurement_time_limit,
        memory_limit_mb: g.memory_limit_mb,
        mock_script: g.mock_script.clone(),
        model: g.model.clone(),
        prompts_dir: g.prompts_dir.clone(),
    };
    let result = Settings::resolve(g.config.as_deref(), &overrides)
        .map_err(Failure::input)
        .and_then(|settings| match cli.command {
            Command::Validate { benchmark, report, output } => validate(&settings, &benchmark, &report, output.as_deref()),
            Command::Generate { benchmark, out_dir, force } => generate(&settings, &benchmark, &out_dir, force),
            Command::Evaluate { benchmark, candidates, k, out_dir, resume, allow_config_change } => {
                evaluate(&settings, &benchmark, &candidates, k, &out_dir, resume, allow_config_change)
            }
            Command::Probe => {
                probe();
                Ok(())
            }
            Command::Report { report } => show_report(&report),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn sandbox() -> Result<Arc<Sandbox>, Failure> {
    Sandbox::new(SandboxConfig::from_env())
        .map(Arc::new)
        .map_err(|e| Failure::infra(format!("sandbox: {e}")))
}

fn cache_dir() -> PathBuf {
    std::env::var_os("STRESSBENCH_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("stressbench-cache"))
}

/// Counter, lock and meter for a measuring subcommand; exit 3 without a counter.
fn meter(sandbox: Arc<Sandbox>) -> Result<(Meter, MachineLock), Failure> {
    let counter = select_counter().map_err(|e| {
        probe();
        Failure { code: 3, message: format!("no instruction counter available: {e}") }
    })?;
    let lock = acquire_machine_lock(&default_lock_path()).map_err(|e| Failure::infra(e.to_string()))?;
    Ok((Meter::new(sandbox, counter).with_cache_dir(cache_dir()), lock))
}

fn load(path: &Path) -> Result<Vec<stressbench::model::Problem>, Failure> {
    load_problems(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::infra(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Failure::infra(format!("{}: {e}", path.display())))
}

fn validate(settings: &Settings, benchmark: &Path, report: &Path, output: Option<&Path>) -> Outcome {
    let problems = load(benchmark)?;
    let sb = sandbox()?;
    let mut outcomes = Vec::new();
    let mut kept = Vec::new();
    for p in &problems {
        let (outcome, validated) = validate_problem(p, sb.as_ref()).map_err(|e| Failure::infra(e.to_string()))?;
        if !outcome.removed {
            kept.push(validated);
        }
        outcomes.push(outcome);
    }
    let summary = ValidationReport::new(outcomes);
    for o in &summary.problems {
        for r in &o.removed_solutions {
            println!("{}: removed {} ({:?}: {})", o.problem_id, r.label, r.reason, r.detail);
        }
        if o.removed {
            println!("{}: problem removed ({})", o.problem_id, o.reasons.join("; "));
        }
    }
    println!(
        "{} problems, {} removed, {} ground truths removed",
        problems.len(),
        summary.removed_problems,
        summary.removed_solutions
    );
    write_json(report, &serde_json::json!({ "seed": settings.seed, "report": summary }))?;
    if let Some(out) = output {
        write_problems(out, &kept).map_err(|e| Failure::infra(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

fn llm_client(settings: &Settings, transcripts: &Path) -> Result<Client, Failure> {
    let client = match &settings.provider.mock_script {
        Some(path) => MockProvider::from_file(path)
            .map(|m| Client::new(Arc::new(m)))
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
        None => client_from_env().map_err(|e| Failure::input(format!("model provider: {e}")))?,
    };
    let client = match &settings.provider.model {
        Some(m) => client.with_model(m.clone()),
        None => client,
    };
    Ok(client.with_transcripts(transcripts))
}

fn generate(settings: &Settings, benchmark: &Path, out_dir: &Path, force: bool) -> Outcome {
    let problems = load(benchmark)?;
    let prompts = Prompts::load(settings.provider.prompts_dir.as_deref()).map_err(|e| Failure::input(e.to_string()))?;
    let client = llm_client(settings, &out_dir.join("transcripts"))?;
    let sb = sandbox()?;
    let (meter, _lock) = meter(sb.clone())?;
    let stgen = Stgen {
        sandbox: sb.as_ref(),
        llm: &client,
        prompts: &prompts,
        cost: Some(&meter),
        config: settings.stgen_config(),
    };
    let builder = SuiteBuilder {
        stgen: &stgen,
        measurer: &meter,
        runs: settings.runs,
        limits: settings.measurement_limits(),
        keep: settings.top_k_cases,
    };
    let out_path = out_dir.join("benchmark.json");
    let mut result = Vec::with_capacity(problems.len());
    let mut reports = Vec::new();
    for p in &problems {
        if p.stressful_tests.len() >= settings.top_k_cases && !force {
            println!("{}: skipped, suite of {} already present", p.id, p.stressful_tests.len());
            result.push(p.clone());
            continue;
        }
        let (built, report, outcome) = builder.build(p).map_err(|e| Failure::infra(format!("{}: {e}", p.id)))?;
        write_json(
            &out_dir.join("audit").join(format!("{}.json", sanitize(&p.id))),
            &serde_json::json!({ "seed": settings.seed, "outcome": outcome, "suite": report }),
        )?;
        println!(
            "{}: {} generated, {} kept{}",
            p.id,
            report.generated,
            report.kept.len(),
            report.diagnostic.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
        );
        reports.push(report);
        result.push(built);
        // Written after each problem so an interrupted run keeps finished work.
        write_problems(&out_path, &merge(&result, &problems))
            .map_err(|e| Failure::infra(format!("{}: {e}", out_path.display())))?;
    }
    write_problems(&out_path, &result).map_err(|e| Failure::infra(format!("{}: {e}", out_path.display())))?;
    write_json(&out_dir.join("generate-report.json"), &serde_json::json!({ "seed": settings.seed, "problems": reports }))
}

/// Finished problems followed by the untouched rest.
fn merge(done: &[stressbench::model::Problem], all: &[stressbench::model::Problem]) -> Vec<stressbench::model::Problem> {
    let mut out = done.to_vec();
    out.extend(all.iter().skip(done.len()).cloned());
    out
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn evaluate(
    settings: &Settings,
    benchmark: &Path,
    candidates: &Path,
    ks: Vec<u64>,
    out_dir: &Path,
    resume: bool,
    allow_config_change: bool,
) -> Outcome {
    let problems = load(benchmark)?;
    let text = fs::read_to_string(candidates).map_err(|e| Failure::input(format!("{}: {e}", candidates.display())))?;
    let candidates: BTreeMap<_, _> = stressbench::evaluator::parse_candidates(&text).map_err(Failure::input)?;
    let config = settings.eval_config(ks);
    let job = EvaluationJob { problems, candidates, config, output_dir: Some(out_dir.to_path_buf()) };
    let sb = sandbox()?;
    let (meter, _lock) = meter(sb.clone())?;
    let evaluator = Evaluator::new(sb.as_ref(), &meter).allow_config_change(allow_config_change);
    let report = if resume { evaluator.resume(&job) } else { evaluator.evaluate(&job) }.map_err(|e| match e {
        EvalError::NoCandidates | EvalError::UnknownProblems(_) | EvalError::Metric { .. } | EvalError::ConfigMismatch { .. } => {
            Failure::input(e.to_string())
        }
        other => Failure::infra(other.to_string()),
    })?;
    print!("{}", render_summary(&report));
    Ok(())
}

fn show_report(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let report: MetricReport =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    print!("{}", render_summary(&report));
    Ok(())
}

fn probe() {
    let forced = std::env::var("STRESSBENCH_COUNTER").unwrap_or_else(|_| "auto".into());
    println!("requested backend: {forced}");
    let perf = PerfEventCounter::probe();
    match &perf {
        Ok(_) => println!("perf-event: available"),
        Err(e) => println!("perf-event: unavailable ({e})"),
    }
    let valgrind = ValgrindCounter::probe(None);
    match &valgrind {
        Ok(_) => println!("valgrind: available"),
        Err(e) => println!("valgrind: unavailable ({e})"),
    }
    if perf.is_err() && valgrind.is_ok() {
        println!("suggestion: hardware counters are denied; set STRESSBENCH_COUNTER=valgrind or use auto");
    }
    match first_allowed_cpu() {
        Some(c) => println!("cpu pinning: measured runs pinned to cpu {c}"),
        None => println!("cpu pinning: unavailable"),
    }
    let Ok(counter) = select_counter() else {
        println!("selected backend: none");
        return;
    };
    println!("selected backend: {}", counter.backend().name());
    let Ok(sb) = sandbox() else {
        println!("baseline: sandbox unavailable");
        return;
    };
    let meter = Meter::new(sb, counter);
    for level in [Level::Function, Level::File] {
        match meter.measure_baseline_uncached(level) {
            Ok(b) => println!("baseline ({}): {b} instructions", level.as_str()),
            Err(e) => println!("baseline ({}): failed ({e})", level.as_str()),
        }
    }
}
