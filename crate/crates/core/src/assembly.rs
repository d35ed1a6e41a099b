//! Selection of the stressful suite from measured candidates.

use std::cmp::Ordering;

use crate::model::{Problem, TestCase};
use crate::perf::MeasurementRecord;

/// Stressful cases kept per problem.
pub const SUITE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyOutcome {
    pub problem: Problem,
    /// No usable candidate was measured; the problem has no stressful suite.
    pub lacks_stressful_suite: bool,
}

/// Orders measured candidates by descending aggregate count, ties by id.
fn rank(a: &(TestCase, f64), b: &(TestCase, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id))
}

/// Keeps the [`SUITE_SIZE`] most expensive candidates; correctness tests are untouched.
pub fn assemble_stressful_suite(
    problem: &Problem,
    candidates: &[(TestCase, MeasurementRecord)],
) -> AssemblyOutcome {
    assemble_top(problem, candidates, SUITE_SIZE)
}

pub fn assemble_top(
    problem: &Problem,
    candidates: &[(TestCase, MeasurementRecord)],
    keep: usize,
) -> AssemblyOutcome {
    let mut usable: Vec<(TestCase, f64)> = candidates
        .iter()
        .filter(|(_, m)| !m.is_failed())
        .filter_map(|(t, m)| m.aggregate_ic.map(|a| (t.clone(), a)))
        .collect();
    usable.sort_by(rank);
    usable.truncate(keep);
    let mut out = problem.clone();
    out.stressful_tests = usable.into_iter().map(|(t, _)| t).collect();
    AssemblyOutcome {
        lacks_stressful_suite: out.stressful_tests.is_empty(),
        problem: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Level, Payload, SolutionProgram};
    use crate::perf::{Backend, Provenance};

    fn problem() -> Problem {
        Problem {
            id: "p".into(),
            level: Level::File,
            description: String::new(),
            entry_point: None,
            ground_truths: vec![SolutionProgram::ground_truth("gt", "print(input())\n")],
            correctness_tests: vec![TestCase::new("c", Payload::Stdin("1\n".into())).with_expected("1")],
            stressful_tests: vec![],
        }
    }

    fn measured(id: &str, ic: f64, failed: bool) -> (TestCase, MeasurementRecord) {
        let record = MeasurementRecord {
            program_label: "gt".into(),
            test_id: id.into(),
            input_digest: None,
            samples_ic: vec![ic as i64; 3],
            samples_wall: vec![0.0; 3],
            aggregate_ic: (!failed).then_some(ic),
            aggregate_wall: Some(0.0),
            baseline_ic: 0,
            failed: failed.then(|| "timeout".to_string()),
            provenance: Provenance {
                backend: Backend::Scripted,
                cpu_model: String::new(),
                pinned_cpu: None,
                scope: "user".into(),
                runner_version: String::new(),
                machine: String::new(),
            },
        };
        (TestCase::new(id, Payload::Stdin(format!("{ic}\n"))), record)
    }

    fn ids(outcome: &AssemblyOutcome) -> Vec<String> {
        outcome.problem.stressful_tests.iter().map(|t| t.id.clone()).collect()
    }

    #[test]
    fn keeps_the_five_most_expensive_in_descending_order() {
        let cands: Vec<_> = (1..=20).map(|i| measured(&format!("s{i:02}"), i as f64, false)).collect();
        let out = assemble_stressful_suite(&problem(), &cands);
        assert_eq!(ids(&out), ["s20", "s19", "s18", "s17", "s16"]);
        assert!(!out.lacks_stressful_suite);
        assert_eq!(out.problem.correctness_tests, problem().correctness_tests);
    }

    #[test]
    fn fewer_candidates_are_all_kept() {
        let cands = vec![measured("a", 5.0, false), measured("b", 9.0, false), measured("c", 7.0, false)];
        assert_eq!(ids(&assemble_stressful_suite(&problem(), &cands)), ["b", "c", "a"]);
    }

    #[test]
    fn tie_at_the_cut_goes_to_the_smaller_id() {
        let mut cands: Vec<_> = ["a", "b", "c", "d"].iter().map(|id| measured(id, 100.0, false)).collect();
        cands.push(measured("z", 50.0, false));
        cands.push(measured("y", 50.0, false));
        assert_eq!(ids(&assemble_stressful_suite(&problem(), &cands)), ["a", "b", "c", "d", "y"]);
    }

    #[test]
    fn failed_records_are_excluded() {
        let cands = vec![measured("slow", 1e12, true), measured("ok", 1.0, false)];
        assert_eq!(ids(&assemble_stressful_suite(&problem(), &cands)), ["ok"]);
        let out = assemble_stressful_suite(&problem(), &[measured("slow", 1e12, true)]);
        assert!(out.lacks_stressful_suite);
        assert!(out.problem.stressful_tests.is_empty());
    }
}
