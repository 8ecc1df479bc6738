//! Labeled classification datasets: JSONL ingestion, split management and
//! head/medium/tail slicing by training-class frequency.
//!
//! A dataset file holds one JSON record per line:
//!
//! ```text
//! {"id": "ex1", "payload": "some input", "label": "pos"}
//! {"id": "ex2", "payload": "other input", "label": "neg", "split": "val", "region": 3}
//! ```
//!
//! `split` and `region` are optional. Records without a split land in the
//! schema's default split; `region` is the latent region tag consumed by
//! synthetic backends.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("unknown label {label:?} at line {line}")]
    UnknownLabel { label: String, line: usize },
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("train split is empty; class counts are undefined")]
    EmptyTrainSplit,
    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),
    #[error("invalid slice boundaries: t_head={t_head} must exceed t_tail={t_tail}")]
    InvalidBoundaries { t_head: usize, t_tail: usize },
}

impl DatasetError {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetError::Io { .. } => "Io",
            DatasetError::MalformedRecord { .. } => "MalformedRecord",
            DatasetError::DuplicateId(_) => "DuplicateId",
            DatasetError::UnknownLabel { .. } => "UnknownLabel",
            DatasetError::EmptySplit(_) => "EmptySplit",
            DatasetError::EmptyTrainSplit => "EmptyTrainSplit",
            DatasetError::InvalidLabelSpace(_) => "InvalidLabelSpace",
            DatasetError::InvalidBoundaries { .. } => "InvalidBoundaries",
        }
    }
}

/// Ordered set of distinct class labels. The position of a label is its
/// index in every probability vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(DatasetError::InvalidLabelSpace(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(DatasetError::InvalidLabelSpace("empty label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(DatasetError::InvalidLabelSpace(format!(
                    "duplicate label {label:?}"
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    /// Reads a sidecar label file: one label per line, blank lines skipped.
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string),
        )
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for label in &self.labels {
            out.push_str(label);
            out.push('\n');
        }
        out
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = DatasetError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(labels)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" | "dev" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub payload: String,
    pub gold: usize,
    /// Latent region tag; only synthetic data carries one.
    pub region: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub content_hash: String,
}

/// How split names found in a file map onto the canonical splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSchema {
    pub train: String,
    pub val: String,
    pub test: String,
    /// Split used for records that carry no `split` field.
    pub default_split: Split,
    /// Splits that must be non-empty after loading.
    pub required: Vec<Split>,
}

impl Default for SplitSchema {
    fn default() -> Self {
        Self {
            train: "train".into(),
            val: "val".into(),
            test: "test".into(),
            default_split: Split::Train,
            required: Vec::new(),
        }
    }
}

impl SplitSchema {
    fn resolve(&self, name: &str) -> Option<Split> {
        if name == self.train {
            Some(Split::Train)
        } else if name == self.val {
            Some(Split::Val)
        } else if name == self.test {
            Some(Split::Test)
        } else {
            None
        }
    }

    fn name_of(&self, split: Split) -> &str {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    payload: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<u32>,
}

/// An immutable, validated dataset with its train/val/test splits.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    label_space: LabelSpace,
    splits: BTreeMap<Split, Vec<LabeledExample>>,
    provenance: Provenance,
}

impl PartialEq for DatasetBundle {
    /// Content equality; provenance is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.label_space == other.label_space && self.splits == other.splits
    }
}

impl DatasetBundle {
    /// Builds a bundle from in-memory parts, enforcing the same invariants
    /// as [`load_dataset`].
    pub fn new(
        label_space: LabelSpace,
        splits: BTreeMap<Split, Vec<LabeledExample>>,
        provenance: Provenance,
    ) -> Result<Self, DatasetError> {
        let mut ids = HashSet::new();
        for examples in splits.values() {
            for (i, ex) in examples.iter().enumerate() {
                if !ids.insert(ex.id.as_str()) {
                    return Err(DatasetError::DuplicateId(ex.id.clone()));
                }
                if ex.gold >= label_space.len() {
                    return Err(DatasetError::MalformedRecord {
                        line: i + 1,
                        reason: format!("gold index {} out of range", ex.gold),
                    });
                }
            }
        }
        Ok(Self {
            label_space,
            splits,
            provenance,
        })
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Examples of a split, in file order. Missing splits are empty.
    pub fn split(&self, split: Split) -> &[LabeledExample] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn non_empty_split(&self, split: Split) -> Result<&[LabeledExample], DatasetError> {
        let examples = self.split(split);
        if examples.is_empty() {
            return Err(DatasetError::EmptySplit(split));
        }
        Ok(examples)
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.splits.values().flatten().find(|ex| ex.id == id)
    }

    /// Index from example id to example across all splits.
    pub fn index(&self) -> HashMap<&str, &LabeledExample> {
        self.splits
            .values()
            .flatten()
            .map(|ex| (ex.id.as_str(), ex))
            .collect()
    }

    /// Per-class example counts on the train split.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_space.len()];
        for ex in self.split(Split::Train) {
            counts[ex.gold] += 1;
        }
        counts
    }

    /// Serialises the bundle in the dataset JSONL format, splits in
    /// train/val/test order, examples in stored order.
    pub fn to_jsonl(&self, schema: &SplitSchema) -> String {
        let mut out = String::new();
        for (split, examples) in &self.splits {
            for ex in examples {
                let record = RawRecord {
                    id: ex.id.clone(),
                    payload: ex.payload.clone(),
                    label: self.label_space.labels[ex.gold].clone(),
                    split: Some(schema.name_of(*split).to_string()),
                    region: ex.region,
                };
                out.push_str(&serde_json::to_string(&record).expect("record serialises"));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path, schema: &SplitSchema) -> Result<(), DatasetError> {
        let mut file = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(self.to_jsonl(schema).as_bytes())
            .map_err(|source| DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Loads a dataset JSONL file. With `labels` the label order is taken from
/// it and any other label is rejected; otherwise labels are inferred in
/// order of first appearance.
pub fn load_dataset(
    path: &Path,
    labels: Option<&LabelSpace>,
    schema: &SplitSchema,
) -> Result<DatasetBundle, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut bundle = parse_dataset(&bytes, labels, schema)?;
    bundle.provenance = Provenance {
        source: path.display().to_string(),
        content_hash: sha256_hex(&bytes),
    };
    Ok(bundle)
}

/// Parses dataset JSONL from memory. Provenance source is `<memory>`.
pub fn parse_dataset(
    bytes: &[u8],
    labels: Option<&LabelSpace>,
    schema: &SplitSchema,
) -> Result<DatasetBundle, DatasetError> {
    let mut records = Vec::new();
    for (i, line) in bytes.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(DatasetError::MalformedRecord {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        records.push((line_no, record));
    }

    let label_space = match labels {
        Some(space) => space.clone(),
        None => {
            let mut order: Vec<String> = Vec::new();
            for (_, r) in &records {
                if !order.contains(&r.label) {
                    order.push(r.label.clone());
                }
            }
            LabelSpace::new(order)?
        }
    };

    let mut ids = HashSet::new();
    let mut splits: BTreeMap<Split, Vec<LabeledExample>> = BTreeMap::new();
    for (line_no, record) in records {
        if !ids.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        let gold = label_space
            .index_of(&record.label)
            .ok_or_else(|| DatasetError::UnknownLabel {
                label: record.label.clone(),
                line: line_no,
            })?;
        let split = match &record.split {
            Some(name) => schema
                .resolve(name)
                .ok_or_else(|| DatasetError::MalformedRecord {
                    line: line_no,
                    reason: format!("unknown split {name:?}"),
                })?,
            None => schema.default_split,
        };
        splits.entry(split).or_default().push(LabeledExample {
            id: record.id,
            payload: record.payload,
            gold,
            region: record.region,
        });
    }

    if splits.values().all(Vec::is_empty) {
        return Err(DatasetError::EmptySplit(schema.default_split));
    }
    for split in &schema.required {
        if splits.get(split).is_none_or(Vec::is_empty) {
            return Err(DatasetError::EmptySplit(*split));
        }
    }

    Ok(DatasetBundle {
        label_space,
        splits,
        provenance: Provenance {
            source: "<memory>".into(),
            content_hash: sha256_hex(bytes),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Head,
    Medium,
    Tail,
}

impl Slice {
    pub const ALL: [Slice; 3] = [Slice::Head, Slice::Medium, Slice::Tail];

    pub fn as_str(&self) -> &'static str {
        match self {
            Slice::Head => "head",
            Slice::Medium => "medium",
            Slice::Tail => "tail",
        }
    }
}

/// Class-count cutoffs: head if `count >= t_head`, tail if `count <= t_tail`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceBoundaries {
    pub t_head: usize,
    pub t_tail: usize,
}

impl SliceBoundaries {
    /// Tertile cutoffs of the sorted class-count sequence: the lowest third
    /// of classes (at least one) fall at or under `t_tail`, the highest third
    /// at or above `t_head`. Ties can move extra classes into head or tail.
    pub fn tertiles(counts: &[usize]) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let k = sorted.len();
        if k == 0 {
            return Self { t_head: 1, t_tail: 0 };
        }
        let third = (k / 3).max(1);
        let t_tail = sorted[third - 1];
        let t_head = sorted[k - third].max(t_tail + 1);
        Self { t_head, t_tail }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceAssignment {
    /// Slice per class index.
    pub slices: Vec<Slice>,
    pub boundaries: SliceBoundaries,
}

impl SliceAssignment {
    pub fn slice_of(&self, class: usize) -> Slice {
        self.slices[class]
    }
}

/// Assigns each class a slice from its train-split count.
pub fn assign_slices(
    bundle: &DatasetBundle,
    boundaries: SliceBoundaries,
) -> Result<SliceAssignment, DatasetError> {
    if bundle.split(Split::Train).is_empty() {
        return Err(DatasetError::EmptyTrainSplit);
    }
    assign_slices_from_counts(&bundle.train_class_counts(), boundaries)
}

pub fn assign_slices_from_counts(
    counts: &[usize],
    boundaries: SliceBoundaries,
) -> Result<SliceAssignment, DatasetError> {
    let SliceBoundaries { t_head, t_tail } = boundaries;
    if t_head <= t_tail {
        return Err(DatasetError::InvalidBoundaries { t_head, t_tail });
    }
    let slices = counts
        .iter()
        .map(|&c| {
            if c >= t_head {
                Slice::Head
            } else if c <= t_tail {
                Slice::Tail
            } else {
                Slice::Medium
            }
        })
        .collect();
    Ok(SliceAssignment { slices, boundaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_with_counts(counts: &[(&str, usize)]) -> DatasetBundle {
        let space = LabelSpace::new(counts.iter().map(|(l, _)| l.to_string())).unwrap();
        let mut train = Vec::new();
        for (class, (_, n)) in counts.iter().enumerate() {
            for i in 0..*n {
                train.push(LabeledExample {
                    id: format!("{class}-{i}"),
                    payload: String::new(),
                    gold: class,
                    region: None,
                });
            }
        }
        DatasetBundle::new(
            space,
            BTreeMap::from([(Split::Train, train)]),
            Provenance {
                source: "test".into(),
                content_hash: String::new(),
            },
        )
        .unwrap()
    }

    #[test]
    fn loads_minimal_jsonl() {
        let data = br#"{"id":"1","payload":"good","label":"pos"}
{"id":"2","payload":"bad","label":"neg"}
{"id":"3","payload":"fine","label":"pos"}
"#;
        let bundle = parse_dataset(data, None, &SplitSchema::default()).unwrap();
        assert_eq!(bundle.label_space().len(), 2);
        assert_eq!(bundle.label_space().labels(), ["pos", "neg"]);
        assert_eq!(bundle.len(), 3);
        assert_eq!(bundle.split(Split::Train).len(), 3);
    }

    #[test]
    fn duplicate_id_is_named() {
        let data = br#"{"id":"7","payload":"a","label":"pos"}
{"id":"7","payload":"b","label":"neg"}
"#;
        let err = parse_dataset(data, None, &SplitSchema::default()).unwrap_err();
        match err {
            DatasetError::DuplicateId(id) => assert_eq!(id, "7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_across_splits_rejected() {
        let data = br#"{"id":"a","payload":"","label":"x","split":"train"}
{"id":"a","payload":"","label":"y","split":"test"}
"#;
        assert!(matches!(
            parse_dataset(data, None, &SplitSchema::default()),
            Err(DatasetError::DuplicateId(_))
        ));
    }

    #[test]
    fn sidecar_labels_fix_order_and_reject_unknown() {
        let space = LabelSpace::new(["neg", "pos"]).unwrap();
        let data = br#"{"id":"1","payload":"","label":"pos"}"#;
        let bundle = parse_dataset(data, Some(&space), &SplitSchema::default()).unwrap();
        assert_eq!(bundle.split(Split::Train)[0].gold, 1);

        let bad = br#"{"id":"1","payload":"","label":"meh"}"#;
        match parse_dataset(bad, Some(&space), &SplitSchema::default()) {
            Err(DatasetError::UnknownLabel { label, line }) => {
                assert_eq!(label, "meh");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let data = b"{\"id\":\"1\",\"payload\":\"\",\"label\":\"a\"}\n{not json}\n";
        match parse_dataset(data, None, &SplitSchema::default()) {
            Err(DatasetError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn required_split_must_be_present() {
        let data = br#"{"id":"1","payload":"","label":"a"}
{"id":"2","payload":"","label":"b"}"#;
        let schema = SplitSchema {
            required: vec![Split::Val],
            ..SplitSchema::default()
        };
        assert!(matches!(
            parse_dataset(data, None, &schema),
            Err(DatasetError::EmptySplit(Split::Val))
        ));
        assert!(matches!(
            parse_dataset(b"\n", None, &SplitSchema::default()),
            Err(DatasetError::InvalidLabelSpace(_))
        ));
    }

    #[test]
    fn single_label_is_not_a_label_space() {
        assert!(LabelSpace::new(["only"]).is_err());
        assert!(LabelSpace::new(["a", "a"]).is_err());
    }

    #[test]
    fn custom_split_names() {
        let data = br#"{"id":"1","payload":"","label":"a","split":"validation"}
{"id":"2","payload":"","label":"b","split":"training"}"#;
        let schema = SplitSchema {
            train: "training".into(),
            val: "validation".into(),
            ..SplitSchema::default()
        };
        let bundle = parse_dataset(data, None, &schema).unwrap();
        assert_eq!(bundle.split(Split::Val)[0].id, "1");
        assert_eq!(bundle.split(Split::Train)[0].id, "2");
    }

    #[test]
    fn slices_follow_cutoffs() {
        let bundle = bundle_with_counts(&[("A", 100), ("B", 50), ("C", 5)]);
        let slices = assign_slices(
            &bundle,
            SliceBoundaries {
                t_head: 80,
                t_tail: 10,
            },
        )
        .unwrap();
        assert_eq!(slices.slices, vec![Slice::Head, Slice::Medium, Slice::Tail]);
    }

    #[test]
    fn equal_counts_are_all_medium() {
        let bundle = bundle_with_counts(&[("A", 40), ("B", 40), ("C", 40)]);
        let slices = assign_slices(
            &bundle,
            SliceBoundaries {
                t_head: 80,
                t_tail: 10,
            },
        )
        .unwrap();
        assert!(slices.slices.iter().all(|s| *s == Slice::Medium));
    }

    #[test]
    fn slice_errors() {
        let bundle = bundle_with_counts(&[("A", 4), ("B", 4)]);
        assert!(matches!(
            assign_slices(
                &bundle,
                SliceBoundaries {
                    t_head: 5,
                    t_tail: 5
                }
            ),
            Err(DatasetError::InvalidBoundaries { .. })
        ));
        let empty = DatasetBundle::new(
            LabelSpace::new(["a", "b"]).unwrap(),
            BTreeMap::new(),
            Provenance {
                source: String::new(),
                content_hash: String::new(),
            },
        )
        .unwrap();
        assert!(matches!(
            assign_slices(
                &empty,
                SliceBoundaries {
                    t_head: 2,
                    t_tail: 1
                }
            ),
            Err(DatasetError::EmptyTrainSplit)
        ));
    }

    #[test]
    fn tertiles_split_ten_classes_three_ways() {
        let counts = [500, 450, 400, 300, 250, 200, 150, 60, 40, 20];
        let b = SliceBoundaries::tertiles(&counts);
        assert_eq!(b, SliceBoundaries { t_head: 400, t_tail: 60 });
        let a = assign_slices_from_counts(&counts, b).unwrap();
        let heads = a.slices.iter().filter(|s| **s == Slice::Head).count();
        let tails = a.slices.iter().filter(|s| **s == Slice::Tail).count();
        assert_eq!((heads, tails), (3, 3));
    }

    #[test]
    fn tertiles_with_ties_stay_valid() {
        let b = SliceBoundaries::tertiles(&[40, 40, 40]);
        assert!(b.t_head > b.t_tail);
    }
}
