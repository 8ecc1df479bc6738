//! Synthetic oracles whose accuracy depends on whether an example's latent
//! region is covered by the model.
//!
//! A profile is correct with probability `a`, where `a` is the in-region
//! accuracy (or a per-region override) for covered regions and the
//! out-of-region accuracy elsewhere. Wrong answers are uniform over the
//! other labels. The peak logit grows with `a` and is larger for correct
//! answers, so confidence is informative about both coverage and
//! correctness.
//!
//! Every draw comes from a ChaCha stream keyed by
//! `(seed, backend id, example id)`; predictions do not depend on call
//! order or on which other examples exist.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, Backend, BackendDescriptor, BackendError, BackendSource, PredictionRecord};
use crate::dataset::{LabelSpace, LabeledExample};
use crate::hashing::sha256_fields;

/// Floor added to the peak strength so the predicted label is always the
/// strict arg-max.
const MIN_MARGIN: f64 = 0.05;
/// Upper bound of the noise on non-predicted logits.
const OFF_PEAK_NOISE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionAccuracy {
    pub region: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    pub covered_regions: BTreeSet<u32>,
    pub in_region_accuracy: f64,
    pub out_region_accuracy: f64,
    pub sharpness: f64,
    /// Accuracy overrides for individual covered regions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub region_accuracy: Vec<RegionAccuracy>,
}

impl SyntheticProfile {
    pub fn new<I>(covered: I, in_acc: f64, out_acc: f64, sharpness: f64) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = u32>,
    {
        let profile = Self {
            covered_regions: covered.into_iter().collect(),
            in_region_accuracy: in_acc,
            out_region_accuracy: out_acc,
            sharpness,
            region_accuracy: Vec::new(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn with_region_accuracy(mut self, region: u32, accuracy: f64) -> Result<Self, BackendError> {
        self.region_accuracy.retain(|r| r.region != region);
        self.region_accuracy.push(RegionAccuracy { region, accuracy });
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.in_region_accuracy) || !unit(self.out_region_accuracy) {
            return Err(BackendError::Config(
                "synthetic accuracies must lie in [0, 1]".into(),
            ));
        }
        if self.in_region_accuracy < self.out_region_accuracy {
            return Err(BackendError::Config(format!(
                "in_region_accuracy {} below out_region_accuracy {}",
                self.in_region_accuracy, self.out_region_accuracy
            )));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(BackendError::Config(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        let mut seen = BTreeSet::new();
        for ra in &self.region_accuracy {
            if !self.covered_regions.contains(&ra.region) {
                return Err(BackendError::Config(format!(
                    "accuracy override for uncovered region {}",
                    ra.region
                )));
            }
            if !seen.insert(ra.region) {
                return Err(BackendError::Config(format!(
                    "duplicate accuracy override for region {}",
                    ra.region
                )));
            }
            if !unit(ra.accuracy) || ra.accuracy < self.out_region_accuracy {
                return Err(BackendError::Config(format!(
                    "override accuracy {} for region {} must lie in [out_region_accuracy, 1]",
                    ra.accuracy, ra.region
                )));
            }
        }
        Ok(())
    }

    pub fn covers(&self, region: u32) -> bool {
        self.covered_regions.contains(&region)
    }

    /// Probability of a correct answer for an example of `region`.
    pub fn accuracy_in(&self, region: u32) -> f64 {
        if !self.covers(region) {
            return self.out_region_accuracy;
        }
        self.region_accuracy
            .iter()
            .find(|r| r.region == region)
            .map_or(self.in_region_accuracy, |r| r.accuracy)
    }
}

/// Draws one synthetic prediction. Pure in `(profile, backend_id, example, seed)`.
pub fn synthetic_predict(
    profile: &SyntheticProfile,
    backend_id: &str,
    example: &LabeledExample,
    classes: usize,
    seed: u64,
) -> Result<PredictionRecord, BackendError> {
    let region = example
        .region
        .ok_or_else(|| BackendError::MissingRegionTag(example.id.clone()))?;
    if example.gold >= classes {
        return Err(BackendError::InvalidDistribution(format!(
            "gold {} out of range for {classes} classes",
            example.gold
        )));
    }
    let key = sha256_fields([
        b"ea-synthetic-predict".as_slice(),
        &seed.to_le_bytes(),
        backend_id.as_bytes(),
        example.id.as_bytes(),
    ]);
    let mut rng = ChaCha8Rng::from_seed(key);

    let accuracy = profile.accuracy_in(region);
    let correct = rng.gen::<f64>() < accuracy;
    let wrong_offset = rng.gen_range(1..classes);
    let predicted = if correct {
        example.gold
    } else {
        (example.gold + wrong_offset) % classes
    };
    let u: f64 = rng.gen();
    let strength = accuracy * if correct { 0.5 + 0.5 * u } else { 0.5 * u };

    let mut logits: Vec<f64> = (0..classes)
        .map(|_| rng.gen::<f64>() * OFF_PEAK_NOISE)
        .collect();
    logits[predicted] = OFF_PEAK_NOISE + profile.sharpness * (MIN_MARGIN + strength);
    let probs = softmax(&logits)?;
    let record = PredictionRecord::new(backend_id, example.id.clone(), probs)?;
    debug_assert_eq!(record.predicted, predicted);
    Ok(record)
}

pub struct SyntheticBackend {
    descriptor: BackendDescriptor,
}

impl SyntheticBackend {
    pub fn new(descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        let BackendSource::Synthetic(src) = &descriptor.source else {
            return Err(BackendError::Config(format!(
                "backend {} is not synthetic",
                descriptor.id
            )));
        };
        src.profile.validate()?;
        Ok(Self { descriptor })
    }

    pub fn profile(&self) -> &SyntheticProfile {
        match &self.descriptor.source {
            BackendSource::Synthetic(src) => &src.profile,
            _ => unreachable!("checked in new"),
        }
    }

    fn seed(&self) -> u64 {
        match &self.descriptor.source {
            BackendSource::Synthetic(src) => src.seed,
            _ => unreachable!("checked in new"),
        }
    }
}

impl Backend for SyntheticBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(
        &self,
        example: &LabeledExample,
        labels: &LabelSpace,
    ) -> Result<PredictionRecord, BackendError> {
        synthetic_predict(
            self.profile(),
            &self.descriptor.id,
            example,
            labels.len(),
            self.seed(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(n: usize, region: u32, classes: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                id: format!("ex{i:06}"),
                payload: String::new(),
                gold: i % classes,
                region: Some(region),
            })
            .collect()
    }

    fn accuracy(profile: &SyntheticProfile, exs: &[LabeledExample], k: usize, seed: u64) -> f64 {
        let correct = exs
            .iter()
            .filter(|ex| synthetic_predict(profile, "m", ex, k, seed).unwrap().predicted == ex.gold)
            .count();
        correct as f64 / exs.len() as f64
    }

    #[test]
    fn perfect_in_region_is_always_right() {
        let p = SyntheticProfile::new([0], 1.0, 0.2, 2.0).unwrap();
        for ex in examples(500, 0, 3) {
            assert_eq!(synthetic_predict(&p, "m", &ex, 3, 9).unwrap().predicted, ex.gold);
        }
    }

    #[test]
    fn monte_carlo_accuracy_matches_profile() {
        let p = SyntheticProfile::new([1], 0.85, 0.55, 4.0).unwrap();
        let inside = examples(10_000, 1, 4);
        let outside = examples(10_000, 2, 4);
        let acc_in = accuracy(&p, &inside, 4, 42);
        let acc_out = accuracy(&p, &outside, 4, 42);
        assert!((acc_in - 0.85).abs() <= 0.02, "in-region {acc_in}");
        assert!((acc_out - 0.55).abs() <= 0.02, "out-region {acc_out}");
        assert!(acc_in > acc_out);
    }

    #[test]
    fn confidence_higher_in_region() {
        let p = SyntheticProfile::new([1], 0.85, 0.55, 4.0).unwrap();
        let mean_conf = |exs: &[LabeledExample]| {
            exs.iter()
                .map(|ex| synthetic_predict(&p, "m", ex, 4, 3).unwrap().confidence)
                .sum::<f64>()
                / exs.len() as f64
        };
        assert!(mean_conf(&examples(2000, 1, 4)) > mean_conf(&examples(2000, 2, 4)));
    }

    #[test]
    fn deterministic_stream() {
        let p = SyntheticProfile::new([0], 0.7, 0.3, 3.0).unwrap();
        let exs = examples(200, 0, 5);
        let run = || -> Vec<String> {
            exs.iter()
                .map(|ex| serde_json::to_string(&synthetic_predict(&p, "m", ex, 5, 11).unwrap()).unwrap())
                .collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn records_satisfy_invariants() {
        let p = SyntheticProfile::new([0], 0.6, 0.0, 8.0).unwrap();
        for k in [2, 3, 10] {
            for ex in examples(300, 0, k).iter().chain(examples(300, 5, k).iter()) {
                let r = synthetic_predict(&p, "m", ex, k, 42).unwrap();
                let sum: f64 = r.probs.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(r.confidence >= 1.0 / k as f64);
                assert_eq!(r.predicted, crate::backends::argmax(&r.probs));
            }
        }
    }

    #[test]
    fn missing_region_is_an_error() {
        let p = SyntheticProfile::new([0], 0.7, 0.3, 3.0).unwrap();
        let ex = LabeledExample {
            id: "x".into(),
            payload: String::new(),
            gold: 0,
            region: None,
        };
        assert!(matches!(
            synthetic_predict(&p, "m", &ex, 2, 0),
            Err(BackendError::MissingRegionTag(_))
        ));
    }

    #[test]
    fn profile_validation() {
        assert!(SyntheticProfile::new([0], 0.4, 0.6, 1.0).is_err());
        assert!(SyntheticProfile::new([0], 1.2, 0.6, 1.0).is_err());
        assert!(SyntheticProfile::new([0], 0.9, 0.6, 0.0).is_err());
        let p = SyntheticProfile::new([0, 1], 0.9, 0.6, 1.0).unwrap();
        assert!(p.clone().with_region_accuracy(3, 0.7).is_err());
        assert!(p.clone().with_region_accuracy(1, 0.5).is_err());
        let p = p.with_region_accuracy(1, 0.7).unwrap();
        assert_eq!(p.accuracy_in(0), 0.9);
        assert_eq!(p.accuracy_in(1), 0.7);
        assert_eq!(p.accuracy_in(2), 0.6);
    }
}
