//! Run configuration: one TOML file naming the dataset, the backends, the
//! plan and the knobs of every workflow step. Unknown keys are rejected and
//! relative paths are taken relative to the file itself.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::augment::{register_augmented_model, AssmRegistration, SsmCriterion, TrainingManifest};
use crate::backends::{BackendDescriptor, BackendRegistry, BackendSource, BuildContext, CostProfile};
use crate::dataset::{
    assign_slices, load_dataset, DatasetBundle, LabelSpace, SliceAssignment, SliceBoundaries, Split,
    SplitSchema,
};
use crate::router::{default_grid, CascadePlan};
use crate::Error;

#[derive(Debug, ThisError)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is missing {0}")]
    Missing(&'static str),
}

impl ConfigError {
    pub fn name(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "InvalidConfig",
            ConfigError::Io { .. } => "Io",
            ConfigError::Missing(_) => "InvalidConfig",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Sidecar label file; labels are inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub schema: SplitSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub grid: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub split: Split,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            budget: None,
            split: Split::Val,
        }
    }
}

/// Thresholds used when a plan is built from the registry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    pub augmented_tau: f64,
    /// Split the specific and augmented models are ranked on.
    pub rank_split: Split,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            tau2: None,
            augmented_tau: 0.5,
            rank_split: Split::Val,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub criterion: SsmCriterion,
}

/// An augmented model and the manifest it was trained from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssmEntry {
    pub id: String,
    pub provenance: String,
    pub manifest: PathBuf,
    #[serde(default)]
    pub cost: CostProfile,
    pub source: BackendSource,
}

impl AssmEntry {
    fn registration(&self) -> AssmRegistration {
        AssmRegistration {
            id: self.id.clone(),
            provenance: self.provenance.clone(),
            cost: self.cost,
            source: self.source.clone(),
        }
    }
}

fn default_task() -> String {
    "task".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default, rename = "backend")]
    pub backends: Vec<BackendDescriptor>,
    #[serde(default, rename = "assm", skip_serializing_if = "Vec::is_empty")]
    pub assms: Vec<AssmEntry>,
    /// Explicit slice cutoffs; tertiles of the train class counts otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slices: Option<SliceBoundaries>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl RunConfig {
    pub fn minimal(dataset: impl Into<PathBuf>) -> Self {
        Self {
            task: default_task(),
            output_dir: default_output_dir(),
            cache_dir: None,
            plan: None,
            dataset: DatasetConfig {
                path: dataset.into(),
                labels: None,
                schema: SplitSchema::default(),
            },
            backends: Vec::new(),
            assms: Vec::new(),
            slices: None,
            calibration: CalibrationConfig::default(),
            cascade: CascadeConfig::default(),
            augment: AugmentConfig::default(),
        }
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            reason: e.to_string(),
        })?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.as_os_str() == "." {
                *p = base.to_path_buf();
            } else if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.path);
        if let Some(p) = &mut self.dataset.labels {
            fix(p);
        }
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        if let Some(p) = &mut self.plan {
            fix(p);
        }
        for b in &mut self.backends {
            b.resolve_paths(base);
        }
        for a in &mut self.assms {
            fix(&mut a.manifest);
            let mut d = BackendDescriptor {
                id: a.id.clone(),
                layer: crate::backends::Layer::Augmented,
                cost: a.cost,
                source: a.source.clone(),
            };
            d.resolve_paths(base);
            a.source = d.source;
        }
    }

    pub fn label_space(&self) -> Result<Option<LabelSpace>, Error> {
        Ok(match &self.dataset.labels {
            Some(path) => Some(LabelSpace::from_file(path)?),
            None => None,
        })
    }

    pub fn load_dataset(&self) -> Result<DatasetBundle, Error> {
        let labels = self.label_space()?;
        Ok(load_dataset(
            &self.dataset.path,
            labels.as_ref(),
            &self.dataset.schema,
        )?)
    }

    pub fn build_context(&self) -> BuildContext {
        BuildContext {
            cache_dir: self.cache_dir.clone(),
        }
    }

    /// Instantiates every backend, then every registered augmented model.
    pub fn build_registry(&self, bundle: &DatasetBundle) -> Result<BackendRegistry, Error> {
        let ctx = self.build_context();
        let mut registry = BackendRegistry::new(bundle.label_space().clone());
        for d in &self.backends {
            registry.register_descriptor(d.clone(), &ctx)?;
        }
        for a in &self.assms {
            let manifest = TrainingManifest::load(&a.manifest)?;
            register_augmented_model(&mut registry, a.registration(), &manifest, &ctx)?;
        }
        Ok(registry)
    }

    pub fn load_plan(&self) -> Result<CascadePlan, Error> {
        let path = self.plan.as_ref().ok_or(ConfigError::Missing("plan"))?;
        Ok(CascadePlan::load(path)?)
    }

    pub fn slices(&self, bundle: &DatasetBundle) -> Result<SliceAssignment, Error> {
        let boundaries = self
            .slices
            .unwrap_or_else(|| SliceBoundaries::tertiles(&bundle.train_class_counts()));
        Ok(assign_slices(bundle, boundaries)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
task = "nli"
plan = "plan.toml"
cache_dir = "/abs/cache"

[dataset]
path = "data/nli.jsonl"
labels = "data/labels.txt"

[[backend]]
id = "roberta"
layer = "specific"
source = { kind = "offline", path = "preds.jsonl" }

[[backend]]
id = "glm"
layer = "large"
cost = { latency_ms_per_call = 400.0, memory_mb = 0.0, dollars_per_1k_calls = 0.5 }
source = { kind = "http", url = "http://localhost:8000/v1/chat/completions", model = "glm", template = "{input} {labels}" }

[slices]
t_head = 100
t_tail = 10

[calibration]
budget = 0.35
"#;

    #[test]
    fn parses_and_resolves() {
        let c = RunConfig::parse(SAMPLE, Path::new("/work")).unwrap();
        assert_eq!(c.task, "nli");
        assert_eq!(c.dataset.path, Path::new("/work/data/nli.jsonl"));
        assert_eq!(c.dataset.labels.as_deref(), Some(Path::new("/work/data/labels.txt")));
        assert_eq!(c.plan.as_deref(), Some(Path::new("/work/plan.toml")));
        assert_eq!(c.cache_dir.as_deref(), Some(Path::new("/abs/cache")));
        assert_eq!(c.output_dir, Path::new("/work/out"));
        match &c.backends[0].source {
            BackendSource::Offline(src) => assert_eq!(src.path, Path::new("/work/preds.jsonl")),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.calibration.budget, Some(0.35));
        assert_eq!(c.calibration.grid.len(), 11);
        assert_eq!(c.slices, Some(SliceBoundaries { t_head: 100, t_tail: 10 }));
    }

    #[test]
    fn unknown_keys_rejected() {
        let with_extra = format!("{SAMPLE}\n[extra]\nx = 1\n");
        assert!(RunConfig::parse(&with_extra, Path::new("/")).is_err());
        let typo = SAMPLE.replace("budget", "budjet");
        assert!(matches!(
            RunConfig::parse(&typo, Path::new("/")),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn round_trips() {
        let c = RunConfig::parse(SAMPLE, Path::new("/work")).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml(), Path::new("/elsewhere")).unwrap(), c);
    }
}
