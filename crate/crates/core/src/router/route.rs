use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CascadePlan, RouterError};
use crate::backends::PredictionSource;
use crate::dataset::LabeledExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub backend: String,
    pub confidence: f64,
    pub accepted: bool,
    /// Label the backend predicted at this step.
    pub label: usize,
}

/// Which backends one example visited and which one answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingTrace {
    pub example_id: String,
    pub steps: Vec<TraceStep>,
    pub final_backend: String,
    pub final_label: usize,
}

impl RoutingTrace {
    /// Label emitted if routing had stopped at `backend` (when visited).
    pub fn label_at(&self, backend: &str) -> Option<usize> {
        self.steps
            .iter()
            .find(|s| s.backend == backend)
            .map(|s| s.label)
    }
}

/// Routes one example through the plan.
///
/// Specific stages accept when `confidence >= tau`. The large model accepts
/// unconditionally when there is no augmented layer or its confidence is
/// opaque; otherwise it needs `confidence >= tau2`, after which augmented
/// stages apply their own thresholds and the last one always accepts.
pub fn route_example(
    plan: &CascadePlan,
    source: &dyn PredictionSource,
    example: &LabeledExample,
) -> Result<RoutingTrace, RouterError> {
    let mut steps: Vec<TraceStep> = Vec::with_capacity(plan.max_len());
    let visit = |backend: &str,
                     accept: &dyn Fn(f64) -> bool,
                     steps: &mut Vec<TraceStep>|
     -> Result<bool, RouterError> {
        let record = source
            .predict(backend, example)
            .map_err(|e| RouterError::backend(&example.id, backend, steps.len(), e))?;
        let accepted = accept(record.confidence);
        steps.push(TraceStep {
            backend: backend.to_string(),
            confidence: record.confidence,
            accepted,
            label: record.predicted,
        });
        Ok(accepted)
    };

    let finish = |steps: Vec<TraceStep>| {
        let last = steps.last().expect("at least one step");
        RoutingTrace {
            example_id: example.id.clone(),
            final_backend: last.backend.clone(),
            final_label: last.label,
            steps,
        }
    };

    for stage in &plan.stages {
        let tau = stage.tau;
        if visit(&stage.backend, &|c| c >= tau, &mut steps)? {
            return Ok(finish(steps));
        }
    }

    let lm = &plan.terminal.backend;
    let lm_terminal = plan.augmented.is_empty() || source.opaque_confidence(lm);
    let tau2 = if lm_terminal {
        None
    } else {
        Some(plan.terminal.tau2.ok_or_else(|| {
            RouterError::InvalidPlan("augmented stages need terminal.tau2".into())
        })?)
    };
    let lm_accepts = move |c: f64| tau2.is_none_or(|t| c >= t);
    if visit(lm, &lm_accepts, &mut steps)? {
        return Ok(finish(steps));
    }

    let last = plan.augmented.len() - 1;
    for (i, stage) in plan.augmented.iter().enumerate() {
        let tau = stage.tau;
        let is_last = i == last;
        if visit(&stage.backend, &|c| is_last || c >= tau, &mut steps)? {
            return Ok(finish(steps));
        }
    }
    unreachable!("last augmented stage always accepts")
}

/// Traces of a batch of examples, in input order, plus the ids that
/// failed when errors are skipped.
#[derive(Debug, Clone, Default)]
pub struct RouteOutcome {
    pub traces: Vec<RoutingTrace>,
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RouteOptions {
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Record failing examples instead of aborting.
    pub skip_errors: bool,
}

/// Routes every example, possibly in parallel. Output order is input
/// order regardless of scheduling.
pub fn route_examples(
    plan: &CascadePlan,
    source: &dyn PredictionSource,
    examples: &[LabeledExample],
    opts: RouteOptions,
) -> Result<RouteOutcome, RouterError> {
    plan.validate_with(source)?;
    let run = || -> Vec<Result<RoutingTrace, RouterError>> {
        examples
            .par_iter()
            .map(|ex| route_example(plan, source, ex))
            .collect()
    };
    let results = match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| RouterError::InvalidPlan(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut outcome = RouteOutcome::default();
    for (ex, result) in examples.iter().zip(results) {
        match result {
            Ok(trace) => outcome.traces.push(trace),
            Err(e) if opts.skip_errors => outcome.failures.push((ex.id.clone(), e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}
