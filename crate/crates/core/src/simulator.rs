//! Seeded synthetic worlds.
//!
//! A world is a set of latent regions, each with a probability mass and a
//! class prior, plus synthetic model profiles that are accurate on the
//! regions they cover. The large profile covers a superset of every small
//! profile's regions. All draws are keyed by `(seed, example id, purpose)`,
//! so generation order and parallelism never change the output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    synthetic_predict, write_prediction_rows, BackendDescriptor, BackendError, BackendRegistry,
    BackendSource, BuildContext, CostProfile, Layer, OfflineSource, PredictionRecord,
    SyntheticProfile, SyntheticSource,
};
use crate::dataset::{
    DatasetBundle, DatasetError, LabelSpace, LabeledExample, Provenance, Split, SplitSchema,
};
use crate::hashing::{sha256_fields, sha256_hex};

const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unknown preset {0:?} (expected table3like or table6like)")]
    UnknownPreset(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimulatorError {
    pub fn name(&self) -> &'static str {
        match self {
            SimulatorError::InvalidConfig(_) => "InvalidConfig",
            SimulatorError::UnknownPreset(_) => "UnknownPreset",
            SimulatorError::Backend(e) => e.name(),
            SimulatorError::Dataset(e) => e.name(),
            SimulatorError::Io { .. } => "Io",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        SimulatorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub id: u32,
    pub mass: f64,
    pub class_prior: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layer: Layer,
    #[serde(default)]
    pub cost: CostProfile,
    pub profile: SyntheticProfile,
}

/// Routing defaults shipped with a world, used when it is written out as a
/// runnable workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeDefaults {
    pub tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    pub augmented_tau: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
}

impl Default for CascadeDefaults {
    fn default() -> Self {
        Self {
            tau: 0.5,
            tau2: None,
            augmented_tau: 0.5,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub name: String,
    pub seed: u64,
    pub classes: usize,
    /// Label names; `class0..` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    pub splits: SplitSizes,
    #[serde(rename = "region")]
    pub regions: Vec<RegionSpec>,
    #[serde(rename = "model")]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub cascade: CascadeDefaults,
}

const TABLE3LIKE: &str = include_str!("../presets/table3like.toml");
const TABLE6LIKE: &str = include_str!("../presets/table6like.toml");

pub const PRESETS: [&str; 2] = ["table3like", "table6like"];

impl WorldConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimulatorError> {
        let config: Self =
            toml::from_str(text).map_err(|e| SimulatorError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimulatorError> {
        let text = fs::read_to_string(path).map_err(|e| SimulatorError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world config serialises")
    }

    /// A shipped preset, with its default seed.
    pub fn preset(name: &str) -> Result<Self, SimulatorError> {
        match name {
            "table3like" => Self::from_toml(TABLE3LIKE),
            "table6like" => Self::from_toml(TABLE6LIKE),
            other => Err(SimulatorError::UnknownPreset(other.to_string())),
        }
    }

    pub fn label_space(&self) -> Result<LabelSpace, SimulatorError> {
        let labels = if self.labels.is_empty() {
            (0..self.classes).map(|i| format!("class{i}")).collect()
        } else {
            self.labels.clone()
        };
        Ok(LabelSpace::new(labels)?)
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let invalid = |msg: String| Err(SimulatorError::InvalidConfig(msg));
        if self.classes < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.classes));
        }
        if !self.labels.is_empty() && self.labels.len() != self.classes {
            return invalid(format!(
                "{} labels given for {} classes",
                self.labels.len(),
                self.classes
            ));
        }
        self.label_space()?;
        if self.splits.train + self.splits.val + self.splits.test == 0 {
            return invalid("every split is empty".into());
        }
        if self.regions.is_empty() {
            return invalid("no regions".into());
        }
        let mut region_ids = BTreeSet::new();
        for r in &self.regions {
            if !region_ids.insert(r.id) {
                return invalid(format!("duplicate region {}", r.id));
            }
            if !(r.mass.is_finite() && r.mass >= 0.0) {
                return invalid(format!("region {} has mass {}", r.id, r.mass));
            }
            if r.class_prior.len() != self.classes {
                return invalid(format!(
                    "region {} prior has {} entries for {} classes",
                    r.id,
                    r.class_prior.len(),
                    self.classes
                ));
            }
            if r.class_prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return invalid(format!("region {} prior has a negative entry", r.id));
            }
            let total: f64 = r.class_prior.iter().sum();
            if (total - 1.0).abs() > MASS_TOLERANCE {
                return invalid(format!("region {} prior sums to {total}", r.id));
            }
        }
        let mass: f64 = self.regions.iter().map(|r| r.mass).sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return invalid(format!("region masses sum to {mass}"));
        }

        let mut names = BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return invalid(format!("duplicate model {}", m.name));
            }
            m.profile
                .validate()
                .map_err(|e| SimulatorError::InvalidConfig(format!("model {}: {e}", m.name)))?;
            if let Some(r) = m.profile.covered_regions.difference(&region_ids).next() {
                return invalid(format!("model {} covers unknown region {r}", m.name));
            }
        }
        if !self.models.iter().any(|m| m.layer == Layer::Large) {
            return invalid("no model in the large layer".into());
        }
        Ok(())
    }

    /// True when every large profile covers every small profile's regions,
    /// with at least one region to spare.
    pub fn large_covers_strict_superset(&self) -> bool {
        let large: Vec<_> = self.models.iter().filter(|m| m.layer == Layer::Large).collect();
        self.models
            .iter()
            .filter(|m| m.layer != Layer::Large)
            .all(|small| {
                large.iter().all(|l| {
                    let (big, sm) = (&l.profile.covered_regions, &small.profile.covered_regions);
                    big.is_superset(sm) && big.len() > sm.len()
                })
            })
    }
}

fn stream(seed: u64, id: &str, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sha256_fields([
        b"ea-world".as_slice(),
        &seed.to_le_bytes(),
        id.as_bytes(),
        purpose.as_bytes(),
    ]))
}

fn categorical(rng: &mut ChaCha8Rng, weights: impl IntoIterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    // Rounding left `u` just above the total; fall back to the last
    // category with positive weight.
    last
}

pub fn example_id(index: usize) -> String {
    format!("ex{index:06}")
}

/// A generated dataset with the synthetic backends that label it.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub bundle: DatasetBundle,
    pub descriptors: Vec<BackendDescriptor>,
}

/// Samples the dataset and builds one synthetic descriptor per profile.
///
/// Ids run `ex000000..` across train, val and test in that order; each
/// example draws its region from the masses and its label from that
/// region's class prior.
pub fn generate_world(config: &WorldConfig) -> Result<World, SimulatorError> {
    config.validate()?;
    let labels = config.label_space()?;
    let mut splits = BTreeMap::new();
    let mut offset = 0;
    for split in Split::ALL {
        let n = config.splits.get(split);
        let examples: Vec<LabeledExample> = (offset..offset + n)
            .into_par_iter()
            .map(|i| {
                let id = example_id(i);
                let region =
                    &config.regions[categorical(&mut stream(config.seed, &id, "region"), config.regions.iter().map(|r| r.mass))];
                let gold = categorical(
                    &mut stream(config.seed, &id, "label"),
                    region.class_prior.iter().copied(),
                );
                LabeledExample {
                    payload: format!("{} region {} item {id}", config.name, region.id),
                    id,
                    gold,
                    region: Some(region.id),
                }
            })
            .collect();
        offset += n;
        if !examples.is_empty() {
            splits.insert(split, examples);
        }
    }
    let descriptors = config
        .models
        .iter()
        .map(|m| BackendDescriptor {
            id: m.name.clone(),
            layer: m.layer,
            cost: m.cost,
            source: BackendSource::Synthetic(SyntheticSource {
                seed: config.seed,
                profile: m.profile.clone(),
            }),
        })
        .collect();
    let content_hash = sha256_hex(config.to_toml().as_bytes());
    let bundle = DatasetBundle::new(
        labels,
        splits,
        Provenance {
            source: format!("simulator:{}", config.name),
            content_hash,
        },
    )?;
    Ok(World {
        config: config.clone(),
        bundle,
        descriptors,
    })
}

/// Files written by [`World::write`].
#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub dataset: PathBuf,
    pub labels: PathBuf,
    pub predictions: PathBuf,
    pub world: PathBuf,
}

impl World {
    /// Registry of live synthetic backends, in model order.
    pub fn registry(&self) -> Result<BackendRegistry, SimulatorError> {
        let mut registry = BackendRegistry::new(self.bundle.label_space().clone());
        for d in &self.descriptors {
            registry.register_descriptor(d.clone(), &BuildContext::default())?;
        }
        Ok(registry)
    }

    /// Every model's prediction on every example: model order, then
    /// train/val/test order.
    pub fn predictions(&self) -> Result<Vec<PredictionRecord>, SimulatorError> {
        let classes = self.bundle.label_space().len();
        let examples: Vec<&LabeledExample> = Split::ALL
            .iter()
            .flat_map(|s| self.bundle.split(*s))
            .collect();
        let mut out = Vec::with_capacity(examples.len() * self.config.models.len());
        for m in &self.config.models {
            let rows = examples
                .par_iter()
                .map(|ex| synthetic_predict(&m.profile, &m.name, ex, classes, self.config.seed))
                .collect::<Result<Vec<_>, _>>()?;
            out.extend(rows);
        }
        Ok(out)
    }

    /// Descriptors that read the written predictions file instead of
    /// drawing live.
    pub fn offline_descriptors(&self, predictions: &Path) -> Vec<BackendDescriptor> {
        self.descriptors
            .iter()
            .map(|d| BackendDescriptor {
                id: d.id.clone(),
                layer: d.layer,
                cost: d.cost,
                source: BackendSource::Offline(OfflineSource {
                    path: predictions.to_path_buf(),
                    rows_for: None,
                }),
            })
            .collect()
    }

    /// Writes `dataset.jsonl`, `labels.txt`, `predictions.jsonl` and
    /// `world.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<WorldFiles, SimulatorError> {
        fs::create_dir_all(dir).map_err(|e| SimulatorError::io(dir, e))?;
        let files = WorldFiles {
            dataset: dir.join("dataset.jsonl"),
            labels: dir.join("labels.txt"),
            predictions: dir.join("predictions.jsonl"),
            world: dir.join("world.toml"),
        };
        self.bundle.save(&files.dataset, &SplitSchema::default())?;
        fs::write(&files.labels, self.bundle.label_space().to_file_contents())
            .map_err(|e| SimulatorError::io(&files.labels, e))?;
        let mut buf = Vec::new();
        write_prediction_rows(&mut buf, &self.predictions()?)
            .map_err(|e| SimulatorError::io(&files.predictions, e))?;
        fs::write(&files.predictions, buf).map_err(|e| SimulatorError::io(&files.predictions, e))?;
        fs::write(&files.world, self.config.to_toml())
            .map_err(|e| SimulatorError::io(&files.world, e))?;
        Ok(files)
    }
}
