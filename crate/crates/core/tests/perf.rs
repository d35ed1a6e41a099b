use std::sync::Arc;

use stressbench::model::{Level, Payload, SolutionProgram, TestCase};
use stressbench::perf::{
    CounterError, InstructionCounter, Meter, PerfEventCounter, ValgrindCounter,
};
use stressbench::sandbox::{Limits, Sandbox, SandboxConfig};

fn counter() -> Box<dyn InstructionCounter> {
    match PerfEventCounter::probe() {
        Ok(c) => Box::new(c),
        Err(_) => Box::new(ValgrindCounter::probe(None).expect("no instruction counter on this machine")),
    }
}

fn meter() -> Meter {
    let sandbox = Arc::new(Sandbox::new(SandboxConfig::default()).unwrap());
    Meter::new(sandbox, counter())
}

fn loop_program(n: u64) -> SolutionProgram {
    SolutionProgram::candidate(format!("loop{n}"), format!("s = 0\nfor i in range({n}):\n    s += i\nprint(s)\n"))
}

fn empty_stdin() -> TestCase {
    TestCase::new("t", Payload::Stdin(String::new()))
}

#[test]
fn unavailable_hardware_counter_is_a_typed_error_with_a_hint() {
    match PerfEventCounter::probe() {
        Ok(_) => {} // counters exposed here; nothing to check
        Err(CounterError::Unavailable { backend, hint, .. }) => {
            assert_eq!(backend, "perf-event");
            assert!(hint.contains("STRESSBENCH_COUNTER=valgrind") || hint.contains("perf_event"), "{hint}");
        }
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn baseline_subtraction_nets_a_no_op_to_about_zero() {
    let m = meter();
    let baseline = m.measure_baseline(Level::File).unwrap();
    assert!(baseline > 0);
    let noop = SolutionProgram::candidate("noop", "");
    let rec = m.measure_stable(&noop, Level::File, None, &empty_stdin(), 3, Limits::MEASUREMENT).unwrap();
    let net = rec.aggregate_ic.unwrap();
    assert!(net.abs() < baseline as f64 * 0.01, "net {net} vs baseline {baseline}");
}

#[test]
fn ten_times_the_work_costs_ten_times_the_instructions() {
    let m = meter();
    let t = empty_stdin();
    let small = m.measure_stable(&loop_program(20_000), Level::File, None, &t, 3, Limits::MEASUREMENT).unwrap();
    let large = m.measure_stable(&loop_program(200_000), Level::File, None, &t, 3, Limits::MEASUREMENT).unwrap();
    let ratio = large.aggregate_ic.unwrap() / small.aggregate_ic.unwrap();
    assert!((ratio - 10.0).abs() <= 1.0, "ratio {ratio}");
    assert_eq!(small.samples_ic.len(), 3);
    assert_eq!(large.provenance.backend, m.backend());
}
