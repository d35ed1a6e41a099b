//! Per-problem suite construction: generate, measure, keep the most expensive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::assemble_top;
use crate::evaluator::Measurer;
use crate::model::Problem;
use crate::perf::MeterError;
use crate::sandbox::Limits;
use crate::stgen::{finalize_ids, Stgen, StgenError, StgenOutcome};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Stgen(#[from] StgenError),
    #[error(transparent)]
    Meter(#[from] MeterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub problem_id: String,
    pub seed: u64,
    pub target: String,
    pub generated: usize,
    pub attempts: u32,
    /// Generated case id with its aggregate count, or why measurement failed.
    pub measurements: Vec<(String, Result<f64, String>)>,
    pub kept: Vec<String>,
    pub lacks_stressful_suite: bool,
    pub judge_invocations: Vec<u32>,
    pub diagnostic: Option<String>,
}

pub struct SuiteBuilder<'a> {
    pub stgen: &'a Stgen<'a>,
    pub measurer: &'a dyn Measurer,
    pub runs: usize,
    pub limits: Limits,
    pub keep: usize,
}

impl SuiteBuilder<'_> {
    /// Returns the problem with its new stressful suite.
    pub fn build(&self, problem: &Problem) -> Result<(Problem, SuiteReport, StgenOutcome), PipelineError> {
        let mut outcome = self.stgen.run_stgen(problem)?;
        let mut cases = outcome.accepted.clone();
        finalize_ids(&problem.id, &mut cases);
        let target = problem
            .ground_truths
            .iter()
            .find(|g| g.label == outcome.contract.target_label)
            .or(problem.ground_truths.first())
            .ok_or_else(|| StgenError::NoGroundTruth(problem.id.clone()))?;
        let mut measured = Vec::with_capacity(cases.len());
        let mut measurements = Vec::with_capacity(cases.len());
        for case in cases {
            let rec = self.measurer.measure(problem, target, &case, self.runs, self.limits)?;
            measurements.push((
                case.id.clone(),
                match (&rec.failed, rec.aggregate_ic) {
                    (None, Some(ic)) => Ok(ic),
                    (Some(why), _) => Err(why.clone()),
                    (None, None) => Err("no aggregate".into()),
                },
            ));
            measured.push((case, rec));
        }
        let assembled = assemble_top(problem, &measured, self.keep);
        outcome.accepted = measured.into_iter().map(|(c, _)| c).collect();
        let report = SuiteReport {
            problem_id: problem.id.clone(),
            seed: self.stgen.config.seed,
            target: target.label.clone(),
            generated: outcome.accepted.len(),
            attempts: outcome.attempts,
            measurements,
            kept: assembled.problem.stressful_tests.iter().map(|t| t.id.clone()).collect(),
            lacks_stressful_suite: assembled.lacks_stressful_suite,
            judge_invocations: outcome.audit.judge_invocations(),
            diagnostic: outcome.diagnostic.clone(),
        };
        Ok((assembled.problem, report, outcome))
    }
}
