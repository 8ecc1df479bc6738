use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RouterError;
use crate::backends::{BackendRegistry, Layer, PredictionSource};
use crate::hashing::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub backend: String,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Terminal {
    pub backend: String,
    /// Confidence the large model needs before the augmented layer is
    /// skipped. Unused when there are no augmented stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
}

/// Ordered cascade: specific-layer stages, the large model, then the
/// augmented stages. Immutable once built; the `with_*` methods return
/// modified copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadePlan {
    #[serde(rename = "stage", default)]
    pub stages: Vec<Stage>,
    pub terminal: Terminal,
    #[serde(rename = "augmented", default)]
    pub augmented: Vec<Stage>,
}

impl CascadePlan {
    /// The large model alone.
    pub fn lm_only(terminal: impl Into<String>) -> Self {
        Self {
            stages: Vec::new(),
            terminal: Terminal {
                backend: terminal.into(),
                tau2: None,
            },
            augmented: Vec::new(),
        }
    }

    /// Structural checks: thresholds in [0, 1] and every backend used once.
    pub fn validate(&self) -> Result<(), RouterError> {
        let mut seen = HashSet::new();
        let all = self
            .stages
            .iter()
            .chain(&self.augmented)
            .map(|s| (s.backend.as_str(), Some(s.tau)))
            .chain(std::iter::once((
                self.terminal.backend.as_str(),
                self.terminal.tau2,
            )));
        for (backend, tau) in all {
            if !seen.insert(backend) {
                return Err(RouterError::InvalidPlan(format!(
                    "backend {backend:?} appears more than once"
                )));
            }
            if let Some(tau) = tau {
                if !(0.0..=1.0).contains(&tau) {
                    return Err(RouterError::InvalidPlan(format!(
                        "threshold {tau} for {backend:?} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Structural checks plus: every backend is known to `source`, and an
    /// augmented layer has a large-model threshold unless the large model's
    /// confidence is opaque.
    pub fn validate_with(&self, source: &dyn PredictionSource) -> Result<(), RouterError> {
        self.validate()?;
        if !self.augmented.is_empty()
            && self.terminal.tau2.is_none()
            && !source.opaque_confidence(&self.terminal.backend)
        {
            return Err(RouterError::InvalidPlan(
                "augmented stages need terminal.tau2 unless the large model is opaque".into(),
            ));
        }
        Ok(())
    }

    /// Checks that every referenced backend is registered in the right layer.
    pub fn check_registry(&self, registry: &BackendRegistry) -> Result<(), RouterError> {
        let check = |id: &str, layer: Layer| -> Result<(), RouterError> {
            let backend = registry
                .get(id)
                .ok_or_else(|| RouterError::InvalidPlan(format!("unknown backend {id:?}")))?;
            let actual = backend.descriptor().layer;
            if actual != layer {
                return Err(RouterError::InvalidPlan(format!(
                    "backend {id:?} is in the {actual} layer, plan uses it as {layer}"
                )));
            }
            Ok(())
        };
        for s in &self.stages {
            check(&s.backend, Layer::Specific)?;
        }
        check(&self.terminal.backend, Layer::Large)?;
        for s in &self.augmented {
            check(&s.backend, Layer::Augmented)?;
        }
        self.validate_with(registry)
    }

    /// Same plan with `tau` on every specific-layer stage.
    pub fn with_global_tau(&self, tau: f64) -> Self {
        let mut plan = self.clone();
        for stage in &mut plan.stages {
            stage.tau = tau;
        }
        plan
    }

    /// Same plan without the augmented layer.
    pub fn without_augmented(&self) -> Self {
        let mut plan = self.clone();
        plan.augmented.clear();
        plan
    }

    /// Same plan without the large model; the last specific stage becomes
    /// terminal. `None` when there are no specific stages.
    pub fn specific_layer_only(&self) -> Option<Self> {
        let mut stages = self.stages.clone();
        let last = stages.pop()?;
        Some(Self {
            stages,
            terminal: Terminal {
                backend: last.backend,
                tau2: None,
            },
            augmented: Vec::new(),
        })
    }

    /// Number of steps a trace can have at most.
    pub fn max_len(&self) -> usize {
        self.stages.len() + 1 + self.augmented.len()
    }

    pub fn backend_ids(&self) -> Vec<&str> {
        self.stages
            .iter()
            .map(|s| s.backend.as_str())
            .chain(std::iter::once(self.terminal.backend.as_str()))
            .chain(self.augmented.iter().map(|s| s.backend.as_str()))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self, RouterError> {
        let plan: Self =
            toml::from_str(text).map_err(|e| RouterError::InvalidPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = fs::read_to_string(path).map_err(|source| RouterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CascadePlan {
        CascadePlan {
            stages: vec![
                Stage {
                    backend: "roberta".into(),
                    tau: 0.9,
                },
                Stage {
                    backend: "albert".into(),
                    tau: 0.8,
                },
            ],
            terminal: Terminal {
                backend: "lm".into(),
                tau2: Some(0.7),
            },
            augmented: vec![Stage {
                backend: "assm".into(),
                tau: 0.5,
            }],
        }
    }

    #[test]
    fn toml_layout() {
        let text = r#"
[[stage]]
backend = "roberta"
tau = 0.9

[[stage]]
backend = "albert"
tau = 0.8

[terminal]
backend = "lm"
tau2 = 0.7

[[augmented]]
backend = "assm"
tau = 0.5
"#;
        let plan = CascadePlan::from_toml(text).unwrap();
        assert_eq!(plan, sample());
        assert_eq!(CascadePlan::from_toml(&plan.to_toml()).unwrap(), plan);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_thresholds() {
        assert!(CascadePlan::from_toml("[terminal]\nbackend = \"lm\"\nfoo = 1\n").is_err());
        let mut plan = sample();
        plan.stages[0].tau = 1.5;
        assert!(plan.validate().is_err());
        let mut plan = sample();
        plan.augmented[0].backend = "roberta".into();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn derived_plans() {
        let plan = sample();
        let g = plan.with_global_tau(0.3);
        assert!(g.stages.iter().all(|s| s.tau == 0.3));
        assert_eq!(g.augmented, plan.augmented);
        assert!(plan.without_augmented().augmented.is_empty());
        let sl = plan.specific_layer_only().unwrap();
        assert_eq!(sl.terminal.backend, "albert");
        assert_eq!(sl.stages.len(), 1);
        assert_eq!(plan.max_len(), 4);
        assert_ne!(plan.hash(), g.hash());
    }
}
