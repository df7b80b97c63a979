//! Flow classifiers: the multiclass MLP and the binary benign-likeness model.

mod logistic;
mod mlp;

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::scalar::Scalar;

pub use logistic::{train_logistic, LogisticConfig, LogisticModel};
pub use mlp::{
    finite_difference_check, train_mlp, Activation, GradientCheck, MlpCheckpoint, MlpConfig, MlpModel,
    TrainingInfo,
};

/// Contract shared by every multiclass backend. Tree ensembles or other
/// external models plug into selection and evaluation through this trait.
pub trait Classifier<F: Scalar> {
    fn n_classes(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn is_trained(&self) -> bool;

    /// One probability row per input row, each summing to 1.
    fn predict_proba(&self, x: ArrayView2<F>) -> Result<Array2<F>>;

    fn predict(&self, x: ArrayView2<F>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

/// Index of the largest entry per row; ties go to the lower index.
pub fn argmax_rows<F: Scalar>(p: &Array2<F>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
