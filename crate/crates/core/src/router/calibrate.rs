use serde::{Deserialize, Serialize};

use super::{route_examples, CascadePlan, RouteOptions, RouterError};
use crate::backends::{Memoized, PredictionSource};
use crate::dataset::{DatasetBundle, Split};

/// The default sweep: 0.0, 0.1, ..., 1.0.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Outcome of one global threshold on the calibration split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub correct: usize,
    pub n: usize,
    pub accuracy: f64,
    /// Examples that reached the large model.
    pub lm_invocations: usize,
    pub lm_proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub plan: CascadePlan,
    pub tau: f64,
    pub budget: Option<f64>,
    pub sweep: Vec<SweepPoint>,
}

/// Evaluates each grid value as a shared threshold on all specific stages.
pub fn sweep_thresholds(
    skeleton: &CascadePlan,
    source: &dyn PredictionSource,
    bundle: &DatasetBundle,
    split: Split,
    grid: &[f64],
    jobs: Option<usize>,
) -> Result<Vec<SweepPoint>, RouterError> {
    if grid.is_empty() {
        return Err(RouterError::InvalidGrid("grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(RouterError::InvalidGrid(format!("{bad} outside [0, 1]")));
    }
    let examples = bundle
        .non_empty_split(split)
        .map_err(|_| RouterError::EmptySplit(split))?;
    let memo = Memoized::new(source);
    let lm = skeleton.terminal.backend.as_str();

    grid.iter()
        .map(|&tau| {
            let plan = skeleton.with_global_tau(tau);
            let outcome = route_examples(
                &plan,
                &memo,
                examples,
                RouteOptions {
                    jobs,
                    skip_errors: false,
                },
            )?;
            let n = examples.len();
            let correct = outcome
                .traces
                .iter()
                .zip(examples)
                .filter(|(t, ex)| t.final_label == ex.gold)
                .count();
            let lm_invocations = outcome
                .traces
                .iter()
                .filter(|t| t.steps.iter().any(|s| s.backend == lm))
                .count();
            Ok(SweepPoint {
                tau,
                correct,
                n,
                accuracy: correct as f64 / n as f64,
                lm_invocations,
                lm_proportion: lm_invocations as f64 / n as f64,
            })
        })
        .collect()
}

/// Picks the grid point with the highest accuracy among those whose
/// large-model proportion stays within `budget`; ties go to the lower
/// proportion, then the lower threshold.
pub fn select_threshold(sweep: &[SweepPoint], budget: Option<f64>) -> Result<&SweepPoint, RouterError> {
    let feasible = sweep
        .iter()
        .filter(|p| budget.is_none_or(|b| p.lm_proportion <= b));
    feasible
        .min_by(|a, b| {
            b.correct
                .cmp(&a.correct)
                .then(a.lm_invocations.cmp(&b.lm_invocations))
                .then(a.tau.total_cmp(&b.tau))
        })
        .ok_or_else(|| RouterError::InfeasibleBudget {
            budget: budget.unwrap_or(f64::NAN),
            min_proportion: sweep
                .iter()
                .map(|p| p.lm_proportion)
                .fold(f64::INFINITY, f64::min),
        })
}

/// Grid search for a single global threshold on `split` (normally val).
pub fn calibrate_thresholds(
    skeleton: &CascadePlan,
    source: &dyn PredictionSource,
    bundle: &DatasetBundle,
    split: Split,
    grid: &[f64],
    budget: Option<f64>,
    jobs: Option<usize>,
) -> Result<Calibration, RouterError> {
    let sweep = sweep_thresholds(skeleton, source, bundle, split, grid, jobs)?;
    let best = select_threshold(&sweep, budget)?;
    Ok(Calibration {
        plan: skeleton.with_global_tau(best.tau),
        tau: best.tau,
        budget,
        sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(tau: f64, correct: usize, lm: usize) -> SweepPoint {
        SweepPoint {
            tau,
            correct,
            n: 100,
            accuracy: correct as f64 / 100.0,
            lm_invocations: lm,
            lm_proportion: lm as f64 / 100.0,
        }
    }

    #[test]
    fn selection_rules() {
        let sweep = vec![point(0.5, 80, 10), point(0.7, 85, 30), point(0.9, 85, 60)];
        assert_eq!(select_threshold(&sweep, None).unwrap().tau, 0.7);
        assert_eq!(select_threshold(&sweep, Some(0.2)).unwrap().tau, 0.5);
        assert!(matches!(
            select_threshold(&sweep, Some(0.05)),
            Err(RouterError::InfeasibleBudget { .. })
        ));
        let tie = vec![point(0.6, 85, 30), point(0.4, 85, 30)];
        assert_eq!(select_threshold(&tie, None).unwrap().tau, 0.4);
    }

    #[test]
    fn default_grid_values() {
        let g = default_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[3], 0.3);
    }
}
