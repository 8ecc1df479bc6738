//! Precomputed prediction matrices read from JSONL.
//!
//! Wire format, one row per (backend, example):
//! `{"backend_id": "roberta", "example_id": "ex000001", "probs": [0.9, 0.1]}`

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError, BackendSource, PredictionRecord};
use crate::dataset::{LabelSpace, LabeledExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRow {
    pub backend_id: String,
    pub example_id: String,
    pub probs: Vec<f64>,
}

impl From<&PredictionRecord> for PredictionRow {
    fn from(r: &PredictionRecord) -> Self {
        Self {
            backend_id: r.backend_id.clone(),
            example_id: r.example_id.clone(),
            probs: r.probs.clone(),
        }
    }
}

/// Parses and validates prediction rows: each must be a well-formed row
/// with exactly `classes` probabilities on the simplex, and no
/// (backend, example) pair may repeat.
pub fn read_prediction_rows<R: BufRead>(
    reader: R,
    classes: usize,
) -> Result<Vec<PredictionRecord>, BackendError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| BackendError::SchemaError {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredictionRow =
            serde_json::from_str(&line).map_err(|e| BackendError::SchemaError {
                line: line_no,
                reason: e.to_string(),
            })?;
        if row.probs.len() != classes {
            return Err(BackendError::SchemaError {
                line: line_no,
                reason: format!("expected {classes} probabilities, got {}", row.probs.len()),
            });
        }
        if !seen.insert((row.backend_id.clone(), row.example_id.clone())) {
            return Err(BackendError::SchemaError {
                line: line_no,
                reason: format!(
                    "duplicate row for backend {:?}, example {:?}",
                    row.backend_id, row.example_id
                ),
            });
        }
        let record = PredictionRecord::new(row.backend_id, row.example_id, row.probs).map_err(
            |e| BackendError::SchemaError {
                line: line_no,
                reason: e.to_string(),
            },
        )?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_prediction_rows<'a, W, I>(mut writer: W, records: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    for record in records {
        let row = PredictionRow::from(record);
        serde_json::to_writer(&mut writer, &row)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub struct OfflineBackend {
    descriptor: BackendDescriptor,
    rows: HashMap<String, PredictionRecord>,
}

impl OfflineBackend {
    pub fn load(descriptor: BackendDescriptor, labels: &LabelSpace) -> Result<Self, BackendError> {
        let BackendSource::Offline(src) = &descriptor.source else {
            return Err(BackendError::Config(format!(
                "backend {} is not offline",
                descriptor.id
            )));
        };
        let file = fs::File::open(&src.path).map_err(|e| BackendError::io(&src.path, e))?;
        let records = read_prediction_rows(std::io::BufReader::new(file), labels.len())?;
        let wanted = src.rows_for.as_deref().unwrap_or(&descriptor.id).to_string();
        let rows = records
            .into_iter()
            .filter(|r| r.backend_id == wanted)
            .map(|mut r| {
                r.backend_id = descriptor.id.clone();
                (r.example_id.clone(), r)
            })
            .collect();
        Ok(Self { descriptor, rows })
    }

    /// Builds a backend from records already in memory.
    pub fn from_records<I>(descriptor: BackendDescriptor, records: I) -> Self
    where
        I: IntoIterator<Item = PredictionRecord>,
    {
        let rows = records
            .into_iter()
            .map(|mut r| {
                r.backend_id = descriptor.id.clone();
                (r.example_id.clone(), r)
            })
            .collect();
        Self { descriptor, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Backend for OfflineBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(
        &self,
        example: &LabeledExample,
        _labels: &LabelSpace,
    ) -> Result<PredictionRecord, BackendError> {
        self.rows
            .get(&example.id)
            .cloned()
            .ok_or_else(|| BackendError::MissingPrediction {
                backend: self.descriptor.id.clone(),
                example_id: example.id.clone(),
            })
    }
}
