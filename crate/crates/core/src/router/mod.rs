//! Cascade routing.
//!
//! Specific-layer models are ranked by validation accuracy and consulted in
//! that order; the first whose confidence clears its threshold answers.
//! Inputs no small model is confident about go to the large model, and,
//! when it is itself unsure, on to the augmented layer.

mod calibrate;
mod evaluate;
mod plan;
mod route;

use std::io::{BufRead, Write};
use std::path::PathBuf;

use thiserror::Error;

pub use calibrate::{
    calibrate_thresholds, default_grid, select_threshold, sweep_thresholds, Calibration, SweepPoint,
};
pub use evaluate::{evaluate_backend, rank_models, BackendEvaluation};
pub use plan::{CascadePlan, Stage, Terminal};
pub use route::{route_example, route_examples, RouteOptions, RouteOutcome, RoutingTrace, TraceStep};

use crate::backends::{BackendError, BackendRegistry, CostProfile, Layer};
use crate::dataset::{DatasetBundle, SliceAssignment, Split};
use crate::metrics::{compute_report, MetricsError, MetricsReport};

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("backend {0:?} evaluated more than once")]
    DuplicateBackend(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("no threshold keeps the large-model share within {budget}; the lowest achievable is {min_proportion}")]
    InfeasibleBudget { budget: f64, min_proportion: f64 },
    #[error("example {example_id:?}, step {step} ({backend}): {source}")]
    Backend {
        example_id: String,
        backend: String,
        step: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("trace file line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RouterError {
    pub(crate) fn backend(example_id: &str, backend: &str, step: usize, source: BackendError) -> Self {
        RouterError::Backend {
            example_id: example_id.to_string(),
            backend: backend.to_string(),
            step,
            source,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RouterError::EmptySplit(_) => "EmptySplit",
            RouterError::DuplicateBackend(_) => "DuplicateBackend",
            RouterError::InvalidPlan(_) => "InvalidPlan",
            RouterError::InvalidGrid(_) => "InvalidGrid",
            RouterError::InfeasibleBudget { .. } => "InfeasibleBudget",
            RouterError::Backend { source, .. } => source.name(),
            RouterError::Metrics(e) => e.name(),
            RouterError::MalformedTrace { .. } => "MalformedTrace",
            RouterError::Io { .. } => "Io",
        }
    }
}

/// Evaluates every backend of `layer` on `split`, in registration order.
pub fn evaluate_layer(
    registry: &BackendRegistry,
    layer: Layer,
    bundle: &DatasetBundle,
    split: Split,
) -> Result<Vec<BackendEvaluation>, RouterError> {
    registry
        .by_layer(layer)
        .iter()
        .map(|b| evaluate_backend(registry, b.id(), bundle, split))
        .collect()
}

/// Builds a plan from the registry: specific and augmented backends ranked
/// by accuracy on `split`, every specific stage at `tau`, every augmented
/// stage at `augmented_tau`, and the single large backend as terminal.
pub fn build_plan(
    registry: &BackendRegistry,
    bundle: &DatasetBundle,
    split: Split,
    tau: f64,
    tau2: Option<f64>,
    augmented_tau: f64,
) -> Result<(CascadePlan, Vec<BackendEvaluation>), RouterError> {
    let large = registry.by_layer(Layer::Large);
    let terminal = match large.as_slice() {
        [one] => one.id().to_string(),
        [] => return Err(RouterError::InvalidPlan("no backend in the large layer".into())),
        _ => {
            return Err(RouterError::InvalidPlan(
                "more than one backend in the large layer".into(),
            ))
        }
    };
    let specific = evaluate_layer(registry, Layer::Specific, bundle, split)?;
    let augmented = evaluate_layer(registry, Layer::Augmented, bundle, split)?;
    let stages = rank_models(&specific)?
        .into_iter()
        .map(|backend| Stage { backend, tau })
        .collect();
    let augmented_stages = rank_models(&augmented)?
        .into_iter()
        .map(|backend| Stage {
            backend,
            tau: augmented_tau,
        })
        .collect();
    let plan = CascadePlan {
        stages,
        terminal: Terminal {
            backend: terminal,
            tau2,
        },
        augmented: augmented_stages,
    };
    plan.validate_with(registry)?;
    let mut evals = specific;
    evals.extend(augmented);
    Ok((plan, evals))
}

/// Routed split with its report.
#[derive(Debug, Clone)]
pub struct RoutedSplit {
    pub outcome: RouteOutcome,
    pub report: MetricsReport,
}

/// Routes a whole split and aggregates the report over the examples that
/// routed successfully.
pub fn route_dataset(
    plan: &CascadePlan,
    registry: &BackendRegistry,
    bundle: &DatasetBundle,
    split: Split,
    slices: Option<&SliceAssignment>,
    opts: RouteOptions,
) -> Result<RoutedSplit, RouterError> {
    let examples = bundle
        .non_empty_split(split)
        .map_err(|_| RouterError::EmptySplit(split))?;
    let outcome = route_examples(plan, registry, examples, opts)?;
    let routed: Vec<_> = if outcome.failures.is_empty() {
        examples.to_vec()
    } else {
        let failed: std::collections::HashSet<&str> =
            outcome.failures.iter().map(|(id, _)| id.as_str()).collect();
        examples
            .iter()
            .filter(|ex| !failed.contains(ex.id.as_str()))
            .cloned()
            .collect()
    };
    let costs = registry.cost_profiles();
    let plan_costs: Vec<(String, CostProfile)> = plan
        .backend_ids()
        .into_iter()
        .map(|id| (id.to_string(), costs.get(id).copied().unwrap_or_default()))
        .collect();
    let report = compute_report(
        &outcome.traces,
        &routed,
        slices,
        &plan_costs,
        Some(&plan.terminal.backend),
    )?;
    Ok(RoutedSplit { outcome, report })
}

pub fn write_traces<W: Write>(mut writer: W, traces: &[RoutingTrace]) -> std::io::Result<()> {
    for trace in traces {
        serde_json::to_writer(&mut writer, trace)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(reader: R) -> Result<Vec<RoutingTrace>, RouterError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RouterError::MalformedTrace {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RouterError::MalformedTrace {
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
