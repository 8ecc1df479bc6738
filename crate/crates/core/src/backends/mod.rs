//! Uniform prediction interface over offline prediction matrices, HTTP
//! chat-completion APIs, subprocess models and synthetic oracles.
//!
//! Every backend turns a [`LabeledExample`] into a [`PredictionRecord`]: a
//! probability vector over the task's [`LabelSpace`], its maximum (the
//! confidence) and the arg-max label, ties going to the lowest index.

pub mod http;
pub mod offline;
pub mod subprocess;
pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabelSpace, LabeledExample};

pub use http::{HttpBackend, HttpEndpoint};
pub use offline::{read_prediction_rows, write_prediction_rows, OfflineBackend, PredictionRow};
pub use subprocess::{SubprocessBackend, SubprocessCommand};
pub use synthetic::{synthetic_predict, RegionAccuracy, SyntheticBackend, SyntheticProfile};

/// Tolerance on the probability sum accepted from external sources.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("non-finite logit at index {0}")]
    NonFiniteInput(usize),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("backend {backend} unavailable: {reason}")]
    BackendUnavailable { backend: String, reason: String },
    #[error("backend {backend} has no prediction for example {example_id:?}")]
    MissingPrediction { backend: String, example_id: String },
    #[error("backend {backend}: could not map response to a label: {raw:?}")]
    ParseFailure { backend: String, raw: String },
    #[error("environment variable {0} with the API key is not set")]
    AuthMissing(String),
    #[error("backend {backend}: HTTP status {code}")]
    HttpStatus { backend: String, code: u16 },
    #[error("example {0:?} has no region tag")]
    MissingRegionTag(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend {0:?} registered twice")]
    DuplicateBackend(String),
    #[error("prediction schema error at line {line}: {reason}")]
    SchemaError { line: usize, reason: String },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl BackendError {
    pub fn name(&self) -> &'static str {
        match self {
            BackendError::NonFiniteInput(_) => "NonFiniteInput",
            BackendError::InvalidDistribution(_) => "InvalidDistribution",
            BackendError::BackendUnavailable { .. } => "BackendUnavailable",
            BackendError::MissingPrediction { .. } => "MissingPrediction",
            BackendError::ParseFailure { .. } => "ParseFailure",
            BackendError::AuthMissing(_) => "AuthMissing",
            BackendError::HttpStatus { .. } => "HttpStatus",
            BackendError::MissingRegionTag(_) => "MissingRegionTag",
            BackendError::UnknownBackend(_) => "UnknownBackend",
            BackendError::DuplicateBackend(_) => "DuplicateBackend",
            BackendError::SchemaError { .. } => "SchemaError",
            BackendError::Config(_) => "Config",
            BackendError::Io { .. } => "Io",
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BackendError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, BackendError> {
    if logits.len() < 2 {
        return Err(BackendError::InvalidDistribution(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(BackendError::NonFiniteInput(i));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn check_distribution(probs: &[f64]) -> Result<f64, BackendError> {
    if probs.len() < 2 {
        return Err(BackendError::InvalidDistribution(format!(
            "need at least 2 classes, got {}",
            probs.len()
        )));
    }
    for (i, p) in probs.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 || *p > 1.0 + SIMPLEX_TOLERANCE {
            return Err(BackendError::InvalidDistribution(format!(
                "entry {i} = {p} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(BackendError::InvalidDistribution(format!(
            "entries sum to {sum}"
        )));
    }
    Ok(sum)
}

/// Maximum entry of a probability vector.
pub fn confidence(probs: &[f64]) -> Result<f64, BackendError> {
    check_distribution(probs)?;
    Ok(probs.iter().copied().fold(0.0, f64::max))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One backend's output for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub backend_id: String,
    pub example_id: String,
    pub probs: Vec<f64>,
    pub confidence: f64,
    pub predicted: usize,
}

impl PredictionRecord {
    /// Validates `probs` and renormalises it onto the simplex.
    pub fn new(
        backend_id: impl Into<String>,
        example_id: impl Into<String>,
        mut probs: Vec<f64>,
    ) -> Result<Self, BackendError> {
        let sum = check_distribution(&probs)?;
        // Sums already at 1 up to roundoff are left alone so that a vector
        // written out and read back stays bit-identical.
        if (sum - 1.0).abs() > probs.len() as f64 * f64::EPSILON {
            for p in &mut probs {
                *p /= sum;
            }
        }
        let predicted = argmax(&probs);
        Ok(Self {
            backend_id: backend_id.into(),
            example_id: example_id.into(),
            confidence: probs[predicted],
            predicted,
            probs,
        })
    }

    pub fn one_hot(
        backend_id: impl Into<String>,
        example_id: impl Into<String>,
        classes: usize,
        predicted: usize,
    ) -> Self {
        let mut probs = vec![0.0; classes];
        probs[predicted] = 1.0;
        Self {
            backend_id: backend_id.into(),
            example_id: example_id.into(),
            probs,
            confidence: 1.0,
            predicted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Specific,
    Large,
    Augmented,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Specific => "specific",
            Layer::Large => "large",
            Layer::Augmented => "augmented",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Offline,
    Http,
    Subprocess,
    Synthetic,
}

/// Declarative per-call cost; nothing here is measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostProfile {
    pub latency_ms_per_call: f64,
    pub memory_mb: f64,
    pub dollars_per_1k_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSource {
    pub path: PathBuf,
    /// Row `backend_id` to read; defaults to the descriptor id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_for: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    pub profile: SyntheticProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSource {
    Offline(OfflineSource),
    Http(HttpEndpoint),
    Subprocess(SubprocessCommand),
    Synthetic(SyntheticSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub id: String,
    pub layer: Layer,
    #[serde(default)]
    pub cost: CostProfile,
    pub source: BackendSource,
}

impl BackendDescriptor {
    pub fn kind(&self) -> BackendKind {
        match self.source {
            BackendSource::Offline(_) => BackendKind::Offline,
            BackendSource::Http(_) => BackendKind::Http,
            BackendSource::Subprocess(_) => BackendKind::Subprocess,
            BackendSource::Synthetic(_) => BackendKind::Synthetic,
        }
    }

    /// Rewrites relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.source {
            BackendSource::Offline(src) if src.path.is_relative() => {
                src.path = base.join(&src.path);
            }
            BackendSource::Subprocess(cmd) => {
                if let Some(dir) = &cmd.working_dir {
                    if dir.is_relative() {
                        cmd.working_dir = Some(base.join(dir));
                    }
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Unlimited,
    MaxInFlight(usize),
    Serialized,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn id(&self) -> &str {
        &self.descriptor().id
    }

    fn predict(
        &self,
        example: &LabeledExample,
        labels: &LabelSpace,
    ) -> Result<PredictionRecord, BackendError>;

    /// True when the backend exposes no usable probability, so its
    /// confidence is a constant 1.0.
    fn opaque_confidence(&self) -> bool {
        false
    }

    fn capacity(&self) -> Capacity {
        Capacity::Unlimited
    }
}

/// Settings needed to turn descriptors into live backends.
#[derive(Debug, Clone, Default)]
pub struct BuildContext {
    pub cache_dir: Option<PathBuf>,
}

pub fn instantiate(
    descriptor: BackendDescriptor,
    labels: &LabelSpace,
    ctx: &BuildContext,
) -> Result<Arc<dyn Backend>, BackendError> {
    Ok(match &descriptor.source {
        BackendSource::Offline(_) => Arc::new(OfflineBackend::load(descriptor, labels)?),
        BackendSource::Http(_) => Arc::new(HttpBackend::new(descriptor, ctx.cache_dir.clone())?),
        BackendSource::Subprocess(_) => Arc::new(SubprocessBackend::new(descriptor)?),
        BackendSource::Synthetic(_) => Arc::new(SyntheticBackend::new(descriptor)?),
    })
}

/// Where predictions come from during routing, keyed by backend id.
pub trait PredictionSource: Sync {
    fn predict(
        &self,
        backend_id: &str,
        example: &LabeledExample,
    ) -> Result<PredictionRecord, BackendError>;

    fn opaque_confidence(&self, backend_id: &str) -> bool;
}

/// The backends of one task, in registration order.
pub struct BackendRegistry {
    labels: LabelSpace,
    backends: Vec<Arc<dyn Backend>>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("labels", &self.labels)
            .field("backends", &self.ids())
            .finish()
    }
}

impl BackendRegistry {
    pub fn new(labels: LabelSpace) -> Self {
        Self {
            labels,
            backends: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>) -> Result<(), BackendError> {
        let id = backend.id().to_string();
        if self.index.contains_key(&id) {
            return Err(BackendError::DuplicateBackend(id));
        }
        self.index.insert(id, self.backends.len());
        self.backends.push(backend);
        Ok(())
    }

    pub fn register_descriptor(
        &mut self,
        descriptor: BackendDescriptor,
        ctx: &BuildContext,
    ) -> Result<(), BackendError> {
        let backend = instantiate(descriptor, &self.labels, ctx)?;
        self.register(backend)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Backend>> {
        self.index.get(id).map(|&i| &self.backends[i])
    }

    pub fn require(&self, id: &str) -> Result<&Arc<dyn Backend>, BackendError> {
        self.get(id)
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    /// Position in registration order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Backend>> {
        self.backends.iter()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.backends.iter().map(|b| b.id()).collect()
    }

    pub fn by_layer(&self, layer: Layer) -> Vec<&Arc<dyn Backend>> {
        self.backends
            .iter()
            .filter(|b| b.descriptor().layer == layer)
            .collect()
    }

    pub fn cost_profiles(&self) -> HashMap<String, CostProfile> {
        self.backends
            .iter()
            .map(|b| (b.id().to_string(), b.descriptor().cost))
            .collect()
    }
}

impl PredictionSource for BackendRegistry {
    fn predict(
        &self,
        backend_id: &str,
        example: &LabeledExample,
    ) -> Result<PredictionRecord, BackendError> {
        let backend = self.require(backend_id)?;
        let record = backend.predict(example, &self.labels)?;
        if record.probs.len() != self.labels.len() {
            return Err(BackendError::InvalidDistribution(format!(
                "backend {backend_id} returned {} probabilities for {} labels",
                record.probs.len(),
                self.labels.len()
            )));
        }
        Ok(record)
    }

    fn opaque_confidence(&self, backend_id: &str) -> bool {
        self.get(backend_id).is_some_and(|b| b.opaque_confidence())
    }
}

/// Caches every prediction of an inner source, so repeated routing passes
/// (threshold sweeps) query each backend at most once per example.
pub struct Memoized<'a, S: PredictionSource + ?Sized> {
    inner: &'a S,
    cache: Mutex<HashMap<(String, String), PredictionRecord>>,
}

impl<'a, S: PredictionSource + ?Sized> Memoized<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<S: PredictionSource + ?Sized> PredictionSource for Memoized<'_, S> {
    fn predict(
        &self,
        backend_id: &str,
        example: &LabeledExample,
    ) -> Result<PredictionRecord, BackendError> {
        let key = (backend_id.to_string(), example.id.clone());
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let record = self.inner.predict(backend_id, example)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key, record.clone());
        Ok(record)
    }

    fn opaque_confidence(&self, backend_id: &str) -> bool {
        self.inner.opaque_confidence(backend_id)
    }
}
