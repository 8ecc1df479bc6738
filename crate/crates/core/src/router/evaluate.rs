use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::RouterError;
use crate::backends::PredictionSource;
use crate::dataset::{DatasetBundle, Split};

/// Accuracy of one backend on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEvaluation {
    pub backend_id: String,
    pub split: Split,
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
}

impl BackendEvaluation {
    pub fn from_counts(backend_id: impl Into<String>, split: Split, correct: usize, n: usize) -> Self {
        Self {
            backend_id: backend_id.into(),
            split,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            correct,
            n,
        }
    }
}

/// Fraction of the split the backend labels correctly.
pub fn evaluate_backend(
    source: &dyn PredictionSource,
    backend_id: &str,
    bundle: &DatasetBundle,
    split: Split,
) -> Result<BackendEvaluation, RouterError> {
    let examples = bundle
        .non_empty_split(split)
        .map_err(|_| RouterError::EmptySplit(split))?;
    let mut correct = 0;
    for ex in examples {
        let record = source
            .predict(backend_id, ex)
            .map_err(|e| RouterError::backend(&ex.id, backend_id, 0, e))?;
        if record.predicted == ex.gold {
            correct += 1;
        }
    }
    Ok(BackendEvaluation::from_counts(
        backend_id,
        split,
        correct,
        examples.len(),
    ))
}

/// Backend ids by descending accuracy. The sort is stable, so equal
/// accuracies keep their input (registration) order.
pub fn rank_models(evals: &[BackendEvaluation]) -> Result<Vec<String>, RouterError> {
    let mut seen = HashSet::new();
    for e in evals {
        if !seen.insert(e.backend_id.as_str()) {
            return Err(RouterError::DuplicateBackend(e.backend_id.clone()));
        }
    }
    let mut order: Vec<&BackendEvaluation> = evals.iter().collect();
    order.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(order.into_iter().map(|e| e.backend_id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, acc: f64) -> BackendEvaluation {
        BackendEvaluation {
            backend_id: id.into(),
            split: Split::Val,
            accuracy: acc,
            correct: 0,
            n: 0,
        }
    }

    #[test]
    fn descending_order() {
        let r = rank_models(&[ev("A", 0.85), ev("B", 0.82), ev("C", 0.83)]).unwrap();
        assert_eq!(r, ["A", "C", "B"]);
    }

    #[test]
    fn ties_keep_registration_order() {
        assert_eq!(rank_models(&[ev("A", 0.8), ev("B", 0.8)]).unwrap(), ["A", "B"]);
        assert_eq!(rank_models(&[ev("B", 0.8), ev("A", 0.8)]).unwrap(), ["B", "A"]);
    }

    #[test]
    fn nli_individual_accuracies() {
        let r = rank_models(&[
            ev("RoBERTa", 0.8551),
            ev("DistilBERT", 0.8240),
            ev("ALBERT", 0.8263),
        ])
        .unwrap();
        assert_eq!(r, ["RoBERTa", "ALBERT", "DistilBERT"]);
    }

    #[test]
    fn duplicates_rejected() {
        assert!(matches!(
            rank_models(&[ev("A", 0.1), ev("A", 0.2)]),
            Err(RouterError::DuplicateBackend(_))
        ));
    }

    #[test]
    fn accuracy_times_n_is_a_count() {
        let e = BackendEvaluation::from_counts("m", Split::Val, 3817, 5000);
        assert!((e.accuracy * e.n as f64 - e.correct as f64).abs() < 1e-9);
    }
}
