//! Training-data selection for augmented small models.
//!
//! Train examples split into a fitted set (the specific layer or the large
//! model gets them right) and an underfitted set (both fail). The
//! underfitted set is exported as a manifest for external fine-tuning; the
//! resulting model comes back as an augmented-layer backend.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendDescriptor, BackendError, BackendRegistry, BackendSource, BuildContext, CostProfile,
    Layer, PredictionRecord, PredictionSource,
};
use crate::dataset::{DatasetBundle, LabeledExample, Split};
use crate::hashing::sha256_hex;
use crate::router::{route_examples, CascadePlan, RouteOptions, RouterError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{backend} has no prediction for {} example(s): {}", ids.len(), preview(ids))]
    MissingPrediction { backend: String, ids: Vec<String> },
    #[error("label space mismatch: {0}")]
    InconsistentLabelSpace(String),
    #[error("manifest is empty: nothing is underfitted")]
    EmptyManifest,
    #[error("provenance {found} does not match manifest {expected}")]
    ProvenanceMismatch { expected: String, found: String },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("the ea_full variant needs large-model predictions on the whole train split")]
    IncompleteLmCoverage,
    #[error("partition does not match the dataset: {0}")]
    PartitionMismatch(String),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AugmentError {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentError::MissingPrediction { .. } => "MissingPrediction",
            AugmentError::InconsistentLabelSpace(_) => "InconsistentLabelSpace",
            AugmentError::EmptyManifest => "EmptyManifest",
            AugmentError::ProvenanceMismatch { .. } => "ProvenanceMismatch",
            AugmentError::SchemaError(_) => "SchemaError",
            AugmentError::IncompleteLmCoverage => "IncompleteLmCoverage",
            AugmentError::PartitionMismatch(_) => "PartitionMismatch",
            AugmentError::Router(e) => e.name(),
            AugmentError::Backend(e) => e.name(),
            AugmentError::Io { .. } => "Io",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        AugmentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}

/// How much of the train split the large model was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmCoverage {
    /// Only where the specific layer erred; `lm_error_ids` is restricted to those.
    SsmErrorsOnly,
    /// Every train example; `lm_error_ids` is the large model's full error set.
    Full,
}

/// What counts as a specific-layer error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmCriterion {
    /// The label the cascade emits with the large model removed.
    #[default]
    RoutedOutput,
    /// Every small model individually wrong.
    AllSsms,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub underfitted_ids: BTreeSet<String>,
    pub fitted_ids: BTreeSet<String>,
    pub ssm_error_ids: BTreeSet<String>,
    pub lm_error_ids: BTreeSet<String>,
    pub lm_coverage: LmCoverage,
}

impl PartitionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partition serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        serde_json::from_str(text).map_err(|e| AugmentError::SchemaError(e.to_string()))
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.underfitted_ids.len() + self.fitted_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn labels_by_id(
    records: &[PredictionRecord],
    classes: usize,
) -> Result<HashMap<&str, usize>, AugmentError> {
    let mut out = HashMap::with_capacity(records.len());
    for r in records {
        if r.probs.len() != classes {
            return Err(AugmentError::InconsistentLabelSpace(format!(
                "{} on {} has {} probabilities, expected {classes}",
                r.backend_id,
                r.example_id,
                r.probs.len()
            )));
        }
        out.insert(r.example_id.as_str(), r.predicted);
    }
    Ok(out)
}

fn backend_name(records: &[PredictionRecord], fallback: &str) -> String {
    records
        .first()
        .map_or_else(|| fallback.to_string(), |r| r.backend_id.clone())
}

/// Ids whose label under `labels` differs from gold, or that are absent.
fn errors_over<'a, I>(
    examples: I,
    labels: &HashMap<&str, usize>,
    backend: &str,
) -> Result<BTreeSet<String>, AugmentError>
where
    I: IntoIterator<Item = &'a LabeledExample>,
{
    let mut missing = Vec::new();
    let mut errors = BTreeSet::new();
    for ex in examples {
        match labels.get(ex.id.as_str()) {
            None => missing.push(ex.id.clone()),
            Some(&label) if label != ex.gold => {
                errors.insert(ex.id.clone());
            }
            Some(_) => {}
        }
    }
    if !missing.is_empty() {
        return Err(AugmentError::MissingPrediction {
            backend: backend.to_string(),
            ids: missing,
        });
    }
    Ok(errors)
}

/// Splits `examples` into fitted and underfitted sets.
///
/// `ssm` holds the specific layer's final label per example and must cover
/// every example. `lm` must cover at least the specific-layer errors; rows
/// for other ids only matter when `lm` covers the whole set, in which case
/// the result records the large model's full error set.
pub fn partition_training_data(
    ssm: &[PredictionRecord],
    lm: &[PredictionRecord],
    examples: &[LabeledExample],
    classes: usize,
) -> Result<PartitionResult, AugmentError> {
    let ssm_labels = labels_by_id(ssm, classes)?;
    let lm_labels = labels_by_id(lm, classes)?;
    let ssm_error_ids = errors_over(examples, &ssm_labels, &backend_name(ssm, "specific layer"))?;
    partition_from_errors(examples, ssm_error_ids, &lm_labels, &backend_name(lm, "large model"))
}

fn partition_from_errors(
    examples: &[LabeledExample],
    ssm_error_ids: BTreeSet<String>,
    lm_labels: &HashMap<&str, usize>,
    lm_name: &str,
) -> Result<PartitionResult, AugmentError> {
    let full = examples.iter().all(|ex| lm_labels.contains_key(ex.id.as_str()));
    let lm_error_ids = if full {
        errors_over(examples, lm_labels, lm_name)?
    } else {
        errors_over(
            examples.iter().filter(|ex| ssm_error_ids.contains(&ex.id)),
            lm_labels,
            lm_name,
        )?
    };
    let underfitted_ids: BTreeSet<String> =
        ssm_error_ids.intersection(&lm_error_ids).cloned().collect();
    let fitted_ids = examples
        .iter()
        .filter(|ex| !underfitted_ids.contains(&ex.id))
        .map(|ex| ex.id.clone())
        .collect();
    Ok(PartitionResult {
        underfitted_ids,
        fitted_ids,
        ssm_error_ids,
        lm_error_ids,
        lm_coverage: if full {
            LmCoverage::Full
        } else {
            LmCoverage::SsmErrorsOnly
        },
    })
}

/// Every example the large model gets wrong. `lm` must cover all of them.
pub fn partition_full(
    lm: &[PredictionRecord],
    examples: &[LabeledExample],
    classes: usize,
) -> Result<BTreeSet<String>, AugmentError> {
    let labels = labels_by_id(lm, classes)?;
    errors_over(examples, &labels, &backend_name(lm, "large model"))
}

/// Options for [`partition_with_source`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PartitionOptions {
    pub criterion: SsmCriterion,
    /// Query the large model on the whole split, not only on specific-layer errors.
    pub full_lm: bool,
    pub jobs: Option<usize>,
}

/// Runs the partition against live backends: the specific layer of `plan`
/// labels every example, then the large model is queried only where it
/// erred (or everywhere with `full_lm`).
pub fn partition_with_source(
    plan: &CascadePlan,
    source: &dyn PredictionSource,
    bundle: &DatasetBundle,
    split: Split,
    opts: PartitionOptions,
) -> Result<PartitionResult, AugmentError> {
    let examples = bundle
        .non_empty_split(split)
        .map_err(|_| RouterError::EmptySplit(split))?;
    let specific = plan.specific_layer_only().ok_or_else(|| {
        RouterError::InvalidPlan("partitioning needs at least one specific stage".into())
    })?;

    let ssm_error_ids: BTreeSet<String> = match opts.criterion {
        SsmCriterion::RoutedOutput => {
            let outcome = route_examples(
                &specific,
                source,
                examples,
                RouteOptions {
                    jobs: opts.jobs,
                    skip_errors: false,
                },
            )?;
            outcome
                .traces
                .iter()
                .zip(examples)
                .filter(|(t, ex)| t.final_label != ex.gold)
                .map(|(_, ex)| ex.id.clone())
                .collect()
        }
        SsmCriterion::AllSsms => {
            let ids: Vec<&str> = plan.stages.iter().map(|s| s.backend.as_str()).collect();
            let wrong = with_pool(opts.jobs, || {
                examples
                    .par_iter()
                    .map(|ex| {
                        for id in &ids {
                            let r = source
                                .predict(id, ex)
                                .map_err(|e| RouterError::backend(&ex.id, id, 0, e))?;
                            if r.predicted == ex.gold {
                                return Ok(None);
                            }
                        }
                        Ok(Some(ex.id.clone()))
                    })
                    .collect::<Result<Vec<_>, RouterError>>()
            })?;
            wrong.into_iter().flatten().collect()
        }
    };

    let lm = plan.terminal.backend.as_str();
    let targets: Vec<&LabeledExample> = examples
        .iter()
        .filter(|ex| opts.full_lm || ssm_error_ids.contains(&ex.id))
        .collect();
    let lm_records = with_pool(opts.jobs, || {
        targets
            .par_iter()
            .map(|ex| {
                source
                    .predict(lm, ex)
                    .map_err(|e| RouterError::backend(&ex.id, lm, 0, e))
            })
            .collect::<Result<Vec<_>, RouterError>>()
    })?;
    let lm_labels: HashMap<&str, usize> = lm_records
        .iter()
        .map(|r| (r.example_id.as_str(), r.predicted))
        .collect();
    partition_from_errors(examples, ssm_error_ids, &lm_labels, lm)
}

fn with_pool<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, RouterError> + Send,
) -> Result<T, RouterError> {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| RouterError::InvalidPlan(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestVariant {
    /// The underfitted set.
    Ea,
    /// Every large-model error.
    EaFull,
}

impl ManifestVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ManifestVariant::Ea => "ea",
            ManifestVariant::EaFull => "ea_full",
        }
    }
}

impl fmt::Display for ManifestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManifestVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ea" => Ok(ManifestVariant::Ea),
            "ea_full" | "ea-full" => Ok(ManifestVariant::EaFull),
            other => Err(format!("unknown manifest variant {other:?} (expected ea or ea_full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub task: String,
    pub variant: ManifestVariant,
    pub label_space: Vec<String>,
    pub partition_hash: String,
    pub plan_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub id: String,
    pub payload: String,
    pub label: String,
}

/// Header line followed by one row per training example, ascending by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingManifest {
    pub header: ManifestHeader,
    pub rows: Vec<ManifestRow>,
}

impl TrainingManifest {
    pub fn header_line(&self) -> String {
        serde_json::to_string(&self.header).expect("header serialises")
    }

    /// Hash a trained model must quote to be registered against this manifest.
    pub fn provenance_hash(&self) -> String {
        sha256_hex(self.header_line().as_bytes())
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("row serialises"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, AugmentError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| AugmentError::SchemaError("manifest has no header".into()))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| AugmentError::SchemaError(format!("header: {e}")))?;
        let rows = lines
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| AugmentError::SchemaError(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let text = fs::read_to_string(path).map_err(|e| AugmentError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), AugmentError> {
        fs::write(path, self.to_jsonl()).map_err(|e| AugmentError::io(path, e))
    }
}

/// A manifest plus non-fatal problems found while building it.
#[derive(Debug)]
pub struct ManifestExport {
    pub manifest: TrainingManifest,
    pub warnings: Vec<AugmentError>,
}

/// Builds the manifest for `variant` from a partition of `bundle`'s train split.
pub fn export_training_manifest(
    partition: &PartitionResult,
    bundle: &DatasetBundle,
    variant: ManifestVariant,
    task: &str,
    plan_hash: &str,
) -> Result<ManifestExport, AugmentError> {
    let train = bundle.split(Split::Train);
    let train_ids: BTreeSet<&str> = train.iter().map(|ex| ex.id.as_str()).collect();
    let covered: BTreeSet<&str> = partition
        .underfitted_ids
        .iter()
        .chain(&partition.fitted_ids)
        .map(String::as_str)
        .collect();
    if covered != train_ids || partition.len() != train.len() {
        return Err(AugmentError::PartitionMismatch(format!(
            "partition covers {} ids, train split has {}",
            partition.len(),
            train.len()
        )));
    }
    let ids = match variant {
        ManifestVariant::Ea => &partition.underfitted_ids,
        ManifestVariant::EaFull => {
            if partition.lm_coverage != LmCoverage::Full {
                return Err(AugmentError::IncompleteLmCoverage);
            }
            &partition.lm_error_ids
        }
    };
    let labels = bundle.label_space();
    let index = bundle.index();
    let rows = ids
        .iter()
        .map(|id| {
            let ex = index[id.as_str()];
            ManifestRow {
                id: ex.id.clone(),
                payload: ex.payload.clone(),
                label: labels.name(ex.gold).expect("gold within label space").to_string(),
            }
        })
        .collect::<Vec<_>>();
    let mut warnings = Vec::new();
    if rows.is_empty() {
        log::warn!("{}", AugmentError::EmptyManifest);
        warnings.push(AugmentError::EmptyManifest);
    }
    Ok(ManifestExport {
        manifest: TrainingManifest {
            header: ManifestHeader {
                task: task.to_string(),
                variant,
                label_space: labels.labels().to_vec(),
                partition_hash: partition.hash(),
                plan_hash: plan_hash.to_string(),
            },
            rows,
        },
        warnings,
    })
}

/// A trained augmented model and the manifest it claims to come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssmRegistration {
    pub id: String,
    pub provenance: String,
    #[serde(default)]
    pub cost: CostProfile,
    pub source: BackendSource,
}

/// Checks provenance against `manifest`, then adds the model to the
/// registry in the augmented layer.
pub fn register_augmented_model(
    registry: &mut BackendRegistry,
    registration: AssmRegistration,
    manifest: &TrainingManifest,
    ctx: &BuildContext,
) -> Result<BackendDescriptor, AugmentError> {
    let expected = manifest.provenance_hash();
    if registration.provenance != expected {
        return Err(AugmentError::ProvenanceMismatch {
            expected,
            found: registration.provenance,
        });
    }
    if manifest.header.label_space != registry.labels().labels() {
        return Err(AugmentError::InconsistentLabelSpace(format!(
            "manifest labels {:?} differ from registry labels {:?}",
            manifest.header.label_space,
            registry.labels().labels()
        )));
    }
    let descriptor = BackendDescriptor {
        id: registration.id,
        layer: Layer::Augmented,
        cost: registration.cost,
        source: registration.source,
    };
    registry
        .register_descriptor(descriptor.clone(), ctx)
        .map_err(|e| match e {
            BackendError::SchemaError { line, reason } => {
                AugmentError::SchemaError(format!("line {line}: {reason}"))
            }
            other => AugmentError::Backend(other),
        })?;
    Ok(descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabelSpace, Provenance};
    use std::collections::BTreeMap;

    fn ex(id: &str, gold: usize) -> LabeledExample {
        LabeledExample {
            id: id.into(),
            payload: format!("text {id}"),
            gold,
            region: None,
        }
    }

    fn rec(backend: &str, id: &str, label: usize) -> PredictionRecord {
        PredictionRecord::one_hot(backend, id, 2, label)
    }

    fn fixture() -> Vec<LabeledExample> {
        ["a", "b", "c", "d", "e"].iter().map(|id| ex(id, 0)).collect()
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn labels_wrong_on(backend: &str, examples: &[LabeledExample], wrong: &[&str]) -> Vec<PredictionRecord> {
        examples
            .iter()
            .map(|e| rec(backend, &e.id, usize::from(wrong.contains(&e.id.as_str()))))
            .collect()
    }

    fn bundle(train: Vec<LabeledExample>) -> DatasetBundle {
        let mut splits = BTreeMap::new();
        splits.insert(Split::Train, train);
        DatasetBundle::new(
            LabelSpace::new(["pos", "neg"]).unwrap(),
            splits,
            Provenance {
                source: "mem".into(),
                content_hash: "0".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn perfect_specific_layer_fits_everything() {
        let exs = fixture();
        let ssm = labels_wrong_on("s", &exs, &[]);
        let p = partition_training_data(&ssm, &[], &exs, 2).unwrap();
        assert!(p.underfitted_ids.is_empty());
        assert_eq!(p.fitted_ids.len(), 5);
        assert_eq!(p.lm_coverage, LmCoverage::SsmErrorsOnly);
    }

    #[test]
    fn intersection_of_errors() {
        let exs = fixture();
        let ssm = labels_wrong_on("s", &exs, &["a", "b", "c"]);
        let lm = labels_wrong_on("lm", &exs, &["b", "c", "d"]);
        let p = partition_training_data(&ssm, &lm, &exs, 2).unwrap();
        assert_eq!(p.underfitted_ids, set(&["b", "c"]));
        assert_eq!(p.fitted_ids, set(&["a", "d", "e"]));
        assert_eq!(p.lm_error_ids, set(&["b", "c", "d"]));
        assert_eq!(p.lm_coverage, LmCoverage::Full);
    }

    #[test]
    fn lazy_lm_only_needs_ssm_errors() {
        let exs = fixture();
        let ssm = labels_wrong_on("s", &exs, &["a", "b", "c"]);
        let lm: Vec<_> = labels_wrong_on("lm", &exs, &["b", "c", "d"])
            .into_iter()
            .filter(|r| ["a", "b", "c"].contains(&r.example_id.as_str()))
            .collect();
        let p = partition_training_data(&ssm, &lm, &exs, 2).unwrap();
        assert_eq!(p.underfitted_ids, set(&["b", "c"]));
        assert_eq!(p.lm_error_ids, set(&["b", "c"]));
        assert_eq!(p.lm_coverage, LmCoverage::SsmErrorsOnly);

        let short = &lm[..2];
        match partition_training_data(&ssm, short, &exs, 2) {
            Err(AugmentError::MissingPrediction { backend, ids }) => {
                assert_eq!(backend, "lm");
                assert_eq!(ids, ["c"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_space_checked() {
        let exs = fixture();
        let ssm = vec![PredictionRecord::one_hot("s", "a", 3, 0)];
        assert!(matches!(
            partition_training_data(&ssm, &[], &exs, 2),
            Err(AugmentError::InconsistentLabelSpace(_))
        ));
    }

    #[test]
    fn full_partition_counts_lm_errors() {
        let exs: Vec<_> = (0..1000).map(|i| ex(&format!("ex{i:04}"), i % 2)).collect();
        let lm: Vec<_> = exs
            .iter()
            .enumerate()
            .map(|(i, e)| rec("lm", &e.id, if i % 10 == 0 { 1 - e.gold } else { e.gold }))
            .collect();
        assert_eq!(partition_full(&lm, &exs, 2).unwrap().len(), 100);
        let perfect: Vec<_> = exs.iter().map(|e| rec("lm", &e.id, e.gold)).collect();
        assert!(partition_full(&perfect, &exs, 2).unwrap().is_empty());
    }

    #[test]
    fn manifest_variants_and_round_trip() {
        let exs = fixture();
        let b = bundle(exs.clone());
        let ssm = labels_wrong_on("s", &exs, &["a", "b", "c"]);
        let lm = labels_wrong_on("lm", &exs, &["b", "c", "d"]);
        let p = partition_training_data(&ssm, &lm, &exs, 2).unwrap();

        let ea = export_training_manifest(&p, &b, ManifestVariant::Ea, "toy", "plan").unwrap();
        assert!(ea.warnings.is_empty());
        assert_eq!(ea.manifest.ids(), set(&["b", "c"]));
        let full = export_training_manifest(&p, &b, ManifestVariant::EaFull, "toy", "plan").unwrap();
        assert!(full.manifest.ids().is_superset(&ea.manifest.ids()));

        let text = ea.manifest.to_jsonl();
        let again = export_training_manifest(&p, &b, ManifestVariant::Ea, "toy", "plan").unwrap();
        assert_eq!(text, again.manifest.to_jsonl());
        let parsed = TrainingManifest::parse(&text).unwrap();
        assert_eq!(parsed, ea.manifest);
        assert_eq!(parsed.ids(), p.underfitted_ids);
        assert_eq!(parsed.header.partition_hash, p.hash());
        assert!(text.starts_with("{\"task\":\"toy\",\"variant\":\"ea\",\"label_space\":[\"pos\",\"neg\"]"));
        assert_eq!(parsed.rows[0].label, "pos");
    }

    #[test]
    fn empty_manifest_is_a_warning() {
        let exs = fixture();
        let b = bundle(exs.clone());
        let p = partition_training_data(&labels_wrong_on("s", &exs, &[]), &[], &exs, 2).unwrap();
        let out = export_training_manifest(&p, &b, ManifestVariant::Ea, "toy", "plan").unwrap();
        assert!(out.manifest.rows.is_empty());
        assert!(matches!(out.warnings[..], [AugmentError::EmptyManifest]));
        assert!(matches!(
            export_training_manifest(&p, &b, ManifestVariant::EaFull, "toy", "plan"),
            Err(AugmentError::IncompleteLmCoverage)
        ));
    }

    #[test]
    fn partition_must_match_bundle() {
        let exs = fixture();
        let p = partition_training_data(&labels_wrong_on("s", &exs, &[]), &[], &exs, 2).unwrap();
        let other = bundle(exs[..3].to_vec());
        assert!(matches!(
            export_training_manifest(&p, &other, ManifestVariant::Ea, "toy", "plan"),
            Err(AugmentError::PartitionMismatch(_))
        ));
    }
}
