use serde::{Deserialize, Serialize};

use super::wasserstein::{emd_1d, mean_columnwise};
use crate::dataset::Dataset;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDrift {
    pub class: String,
    pub source_count: usize,
    pub target_count: usize,
    /// Mean per-feature EMD; `None` when the class is missing on either side.
    pub raw_emd: Option<f64>,
    pub normalized_emd: Option<f64>,
}

impl ClassDrift {
    pub fn absent(&self) -> bool {
        self.raw_emd.is_none()
    }
}

/// Per-class drift between two domains, normalized by the largest class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub classes: Vec<ClassDrift>,
    /// Class with the largest raw EMD (first on ties).
    pub reference_class: Option<String>,
    /// Every shared class has raw EMD 0; normalized values are all 0.
    pub degenerate: bool,
}

/// Compares class-conditional continuous features of `source` and `target`.
/// `target_labels` supplies the target's true classes (hidden truth on the
/// evaluation side).
pub fn class_drift(source: &Dataset, target: &Dataset, target_labels: &[usize]) -> Result<DriftReport> {
    let source_labels = source
        .labels()
        .ok_or_else(|| contract("class drift needs a labeled source"))?;
    if target_labels.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), actual: target_labels.len() });
    }
    if source.schema() != target.schema() {
        return Err(contract("schema mismatch between domains"));
    }
    let schema = source.schema();
    let xs = source.continuous_matrix::<f64>();
    let xt = target.continuous_matrix::<f64>();

    let mut classes = Vec::with_capacity(schema.n_classes());
    for (k, name) in schema.classes.iter().enumerate() {
        let si: Vec<usize> = (0..source.len()).filter(|&i| source_labels[i] == k).collect();
        let ti: Vec<usize> = (0..target.len()).filter(|&i| target_labels[i] == k).collect();
        let raw_emd = if si.is_empty() || ti.is_empty() {
            None
        } else {
            let a = xs.select(ndarray::Axis(0), &si);
            let b = xt.select(ndarray::Axis(0), &ti);
            Some(mean_columnwise(a.view(), b.view(), emd_1d)?)
        };
        classes.push(ClassDrift {
            class: name.clone(),
            source_count: si.len(),
            target_count: ti.len(),
            raw_emd,
            normalized_emd: None,
        });
    }
    if classes.iter().all(ClassDrift::absent) {
        return Err(contract("no class is shared between the two domains"));
    }
    let max = classes
        .iter()
        .filter_map(|c| c.raw_emd)
        .fold(0.0f64, f64::max);
    let degenerate = max == 0.0;
    let reference_class = (!degenerate)
        .then(|| classes.iter().find(|c| c.raw_emd == Some(max)).map(|c| c.class.clone()))
        .flatten();
    for c in &mut classes {
        c.normalized_emd = c.raw_emd.map(|e| if degenerate { 0.0 } else { e / max });
    }
    Ok(DriftReport {
        classes,
        reference_class,
        degenerate,
    })
}
