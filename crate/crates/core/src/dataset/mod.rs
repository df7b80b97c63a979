//! Tabular flow datasets: schema, records, ingestion, normalization,
//! splitting and the synthetic drift benchmark.

mod benchmark;
mod csv_io;
mod normalize;
mod schema;
mod split;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

pub use benchmark::{generate_drift_benchmark, CategoricalSpec, ClassDriftSpec, DriftSpec};
pub use csv_io::{load_csv, write_csv, write_csv_with_truth, LabelMode, LoadReport};
pub use normalize::{normalize, NormStats};
pub use schema::{FeatureDescriptor, FeatureKind, FeatureSchema};
pub use split::{split, split_indices, SplitReport};

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Real,
    /// Drawn from a benchmark generator.
    Synthetic,
    /// Produced by the minority-class generator.
    Augmented,
}

/// One flow. Categorical values are stored as vocabulary indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub values: Vec<f64>,
    pub label: Option<usize>,
    #[serde(default)]
    pub origin: Provenance,
}

impl FlowRecord {
    pub fn new(values: Vec<f64>, label: Option<usize>) -> Self {
        Self {
            values,
            label,
            origin: Provenance::Real,
        }
    }

    pub fn with_origin(mut self, origin: Provenance) -> Self {
        self.origin = origin;
        self
    }
}

/// Ground-truth labels kept alongside an unlabeled dataset. Only the oracle
/// and evaluation paths can read them.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HiddenTruth(pub(crate) Vec<usize>);

/// An immutable, schema-validated collection of flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<FeatureSchema>,
    records: Vec<FlowRecord>,
    labeled: bool,
    hidden: Option<HiddenTruth>,
}

impl Dataset {
    /// Every record must carry a label.
    pub fn labeled(schema: Arc<FeatureSchema>, records: Vec<FlowRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            validate_record(&schema, r, i)?;
            if r.label.is_none() {
                return Err(contract(format!("record {i} of a labeled dataset has no label")));
            }
        }
        Ok(Self {
            schema,
            records,
            labeled: true,
            hidden: None,
        })
    }

    /// Labels on the records are discarded.
    pub fn unlabeled(schema: Arc<FeatureSchema>, mut records: Vec<FlowRecord>) -> Result<Self> {
        for (i, r) in records.iter_mut().enumerate() {
            validate_record(&schema, r, i)?;
            r.label = None;
        }
        Ok(Self {
            schema,
            records,
            labeled: false,
            hidden: None,
        })
    }

    /// Turns a labeled dataset into an unlabeled one whose labels are retained
    /// as oracle ground truth.
    pub fn hide_labels(self) -> Result<Self> {
        if !self.labeled {
            return Err(contract("hide_labels needs a labeled dataset"));
        }
        let mut records = self.records;
        let truth = records
            .iter_mut()
            .map(|r| r.label.take().expect("labeled dataset"))
            .collect();
        Ok(Self {
            schema: self.schema,
            records,
            labeled: false,
            hidden: Some(HiddenTruth(truth)),
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn records(&self) -> &[FlowRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn has_hidden_truth(&self) -> bool {
        self.hidden.is_some()
    }

    pub(crate) fn hidden_truth(&self) -> Option<&[usize]> {
        self.hidden.as_ref().map(|h| h.0.as_slice())
    }

    /// Visible labels; `None` for unlabeled datasets.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.labeled
            .then(|| self.records.iter().map(|r| r.label.expect("labeled")).collect())
    }

    /// Per-class record counts indexed like `schema().classes`.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        let labels = self.labels()?;
        let mut counts = vec![0; self.schema.n_classes()];
        for l in labels {
            counts[l] += 1;
        }
        Some(counts)
    }

    /// Uniform provenance of the records, or `None` when mixed or empty.
    pub fn provenance(&self) -> Option<Provenance> {
        let first = self.records.first()?.origin;
        self.records
            .iter()
            .all(|r| r.origin == first)
            .then_some(first)
    }

    pub fn provenance_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            let key = serde_json::to_value(r.origin)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }

    /// Rows at `indices`, in that order. Hidden truth travels with them.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut records = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| contract(format!("index {i} out of range for {} records", self.len())))?;
            records.push(r.clone());
        }
        let hidden = self
            .hidden
            .as_ref()
            .map(|h| HiddenTruth(indices.iter().map(|&i| h.0[i]).collect()));
        Ok(Self {
            schema: Arc::clone(&self.schema),
            records,
            labeled: self.labeled,
            hidden,
        })
    }

    /// Rows not listed in `excluded`, original order preserved.
    pub fn without(&self, excluded: &[usize]) -> Result<Self> {
        let mut drop = vec![false; self.len()];
        for &i in excluded {
            *drop
                .get_mut(i)
                .ok_or_else(|| contract(format!("index {i} out of range")))? = true;
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop[i]).collect();
        self.subset(&keep)
    }

    /// Attaches labels to the rows at `indices`, yielding a labeled dataset.
    pub fn with_labels(&self, indices: &[usize], labels: &[usize]) -> Result<Self> {
        if indices.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: labels.len(),
            });
        }
        let mut records = Vec::with_capacity(indices.len());
        for (&i, &l) in indices.iter().zip(labels) {
            if l >= self.schema.n_classes() {
                return Err(contract(format!("label {l} outside class vocabulary")));
            }
            let mut r = self
                .records
                .get(i)
                .ok_or_else(|| contract(format!("index {i} out of range")))?
                .clone();
            r.label = Some(l);
            records.push(r);
        }
        Dataset::labeled(Arc::clone(&self.schema), records)
    }

    /// Concatenates labeled datasets sharing one schema.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput("no datasets to concatenate"))?;
        let mut records = Vec::with_capacity(parts.iter().map(|d| d.len()).sum());
        for p in parts {
            if p.schema() != first.schema() {
                return Err(contract("schema mismatch in concatenation"));
            }
            if !p.is_labeled() {
                return Err(contract("concatenation requires labeled datasets"));
            }
            records.extend(p.records.iter().cloned());
        }
        Dataset::labeled(Arc::clone(&first.schema), records)
    }

    /// Row-major matrix of the continuous columns only.
    pub fn continuous_matrix<F: Scalar>(&self) -> Array2<F> {
        let cols = self.schema.continuous_indices();
        Array2::from_shape_fn((self.len(), cols.len()), |(i, j)| {
            F::of(self.records[i].values[cols[j]])
        })
    }

    /// Continuous columns as-is followed by one-hot blocks for categorical
    /// features, in schema order. This is the feature space seen by the
    /// mixtures, the classifiers and the clustering baselines.
    pub fn encode<F: Scalar>(&self) -> Array2<F> {
        let width = self.schema.encoded_dim();
        let mut out = Array2::zeros((self.len(), width));
        for (i, r) in self.records.iter().enumerate() {
            let mut col = 0;
            for (f, &v) in self.schema.features.iter().zip(&r.values) {
                match f.vocabulary() {
                    None => {
                        out[[i, col]] = F::of(v);
                        col += 1;
                    }
                    Some(vocab) => {
                        out[[i, col + v as usize]] = F::one();
                        col += vocab.len();
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn validate_record(schema: &FeatureSchema, r: &FlowRecord, row: usize) -> Result<()> {
    if r.values.len() != schema.dim() {
        return Err(Error::DimensionMismatch {
            expected: schema.dim(),
            actual: r.values.len(),
        });
    }
    for (f, &v) in schema.features.iter().zip(&r.values) {
        match f.vocabulary() {
            None if !v.is_finite() => {
                return Err(contract(format!("row {row}: non-finite value in {:?}", f.name)));
            }
            Some(vocab) if v < 0.0 || v.fract() != 0.0 || v as usize >= vocab.len() => {
                return Err(Error::Vocabulary {
                    row,
                    feature: f.name.clone(),
                    value: v.to_string(),
                });
            }
            _ => {}
        }
    }
    if let Some(l) = r.label {
        if l >= schema.n_classes() {
            return Err(contract(format!("row {row}: label {l} outside class vocabulary")));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn schema() -> Arc<FeatureSchema> {
        Arc::new(
            FeatureSchema::new(
                vec![
                    FeatureDescriptor::categorical("Protocol", ["HTTP", "FTP", "SSH"]),
                    FeatureDescriptor::continuous("Flow Duration"),
                    FeatureDescriptor::continuous("Packet Size"),
                ],
                "Label",
                vec!["Benign".into(), "DoS".into(), "Web Attack".into()],
                "Benign",
            )
            .unwrap(),
        )
    }

    pub fn rec(proto: usize, a: f64, b: f64, label: usize) -> FlowRecord {
        FlowRecord::new(vec![proto as f64, a, b], Some(label))
    }
}
