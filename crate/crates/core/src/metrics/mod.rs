//! Classification scores, per-class drift magnitude and synthetic-data
//! fidelity.

mod classification;
mod drift;
mod render;
mod wasserstein;

use ndarray::Axis;

use crate::dataset::Dataset;
use crate::error::{contract, Result};

pub use classification::{classification_report, ClassScores, MetricsReport};
pub use drift::{class_drift, ClassDrift, DriftReport};
pub use render::{render_class_f1_table, render_metrics_table, render_selection_table};
pub use wasserstein::{emd_1d, mean_columnwise, w2_1d};

/// Mean over continuous features of the exact 1-D W2 distance between two
/// record sets of the same class, in whatever units the datasets carry.
pub fn w2_fidelity(real: &Dataset, synthetic: &Dataset) -> Result<f64> {
    if real.schema() != synthetic.schema() {
        return Err(contract("schema mismatch"));
    }
    let a = real.continuous_matrix::<f64>();
    let b = synthetic.continuous_matrix::<f64>();
    mean_columnwise(a.view(), b.view(), w2_1d)
}

/// Like [`w2_fidelity`], restricted to the rows of one class in each set.
pub fn w2_fidelity_for_class(real: &Dataset, synthetic: &Dataset, class: usize) -> Result<f64> {
    let pick = |d: &Dataset| -> Result<ndarray::Array2<f64>> {
        let labels = d.labels().ok_or_else(|| contract("fidelity needs labeled datasets"))?;
        let rows: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == class).collect();
        Ok(d.continuous_matrix::<f64>().select(Axis(0), &rows))
    };
    let (a, b) = (pick(real)?, pick(synthetic)?);
    mean_columnwise(a.view(), b.view(), w2_1d)
}
