use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.5,
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Binary logistic regression; the positive class is "benign".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct LogisticModel<F> {
    pub weights: Vec<F>,
    pub bias: F,
}

fn sigmoid<F: Scalar>(z: F) -> F {
    // clamp keeps outputs strictly inside (0, 1) even when exp saturates
    let p = F::one() / (F::one() + (-z).exp());
    let eps = F::epsilon();
    p.max(eps).min(F::one() - eps)
}

impl<F: Scalar> LogisticModel<F> {
    fn logit(&self, x: &[F]) -> F {
        self.bias + x.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum::<F>()
    }

    /// `P(benign | x)` for every row.
    pub fn prob_benign(&self, x: ArrayView2<F>) -> Result<Vec<F>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), actual: x.ncols() });
        }
        Ok(x.rows().into_iter().map(|r| sigmoid(self.logit(&r.to_vec()))).collect())
    }
}

/// Full-batch gradient descent on the mean log-loss (plus optional L2 on the
/// weights). `benign[i]` marks the positive rows; both classes must occur.
pub fn train_logistic<F: Scalar>(
    x: ArrayView2<F>,
    benign: &[bool],
    config: &LogisticConfig,
) -> Result<LogisticModel<F>> {
    let (n, d) = x.dim();
    if n != benign.len() {
        return Err(Error::DimensionMismatch { expected: n, actual: benign.len() });
    }
    if !benign.iter().any(|&b| b) || benign.iter().all(|&b| b) {
        return Err(contract("logistic filter needs both benign and non-benign rows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = LogisticModel {
        weights: (0..d).map(|_| F::of(rng.random_range(-0.01..0.01))).collect(),
        bias: F::zero(),
    };
    let lr = F::of(config.lr);
    let l2 = F::of(config.l2);
    let nf = F::of_usize(n);
    let rows: Vec<Vec<F>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for _ in 0..config.epochs {
        let mut gw = vec![F::zero(); d];
        let mut gb = F::zero();
        for (row, &b) in rows.iter().zip(benign) {
            let target = if b { F::one() } else { F::zero() };
            let err = F::one() / (F::one() + (-model.logit(row)).exp()) - target;
            gb += err;
            for (g, &v) in gw.iter_mut().zip(row) {
                *g += err * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(gw) {
            *w -= lr * (g / nf + l2 * *w);
        }
        model.bias -= lr * gb / nf;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn separable_line() {
        let x = Array2::from_shape_vec((4, 1), vec![-1.0, -1.0, 1.0, 1.0]).unwrap();
        let y = [false, false, true, true];
        let m = train_logistic(x.view(), &y, &LogisticConfig::default()).unwrap();
        let p = m.prob_benign(ndarray::array![[1.0], [-1.0]].view()).unwrap();
        assert!(p[0] > 0.9, "{p:?}");
        assert!(p[1] < 0.1);
    }

    #[test]
    fn symmetric_data_is_undecided_at_origin() {
        let x = Array2::from_shape_vec((6, 1), vec![-1.0, 0.5, -0.5, 1.0, -0.5, 0.5]).unwrap();
        // benign and attack rows mirror each other around 0
        let y = [true, true, true, false, false, false];
        let m = train_logistic(x.view(), &y, &LogisticConfig::default()).unwrap();
        let p: f64 = m.prob_benign(ndarray::array![[0.0]].view()).unwrap()[0];
        assert!((p - 0.5).abs() < 0.05, "{p}");
    }

    #[test]
    fn deterministic_and_bounded() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let y: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let cfg = LogisticConfig { seed: 4, ..Default::default() };
        let a = train_logistic(x.view(), &y, &cfg).unwrap();
        let b = train_logistic(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, b);
        let p = a.prob_benign(Array2::from_elem((1, 3), 1e6).view()).unwrap()[0];
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn one_class_rejected() {
        let x = Array2::<f64>::zeros((3, 1));
        assert!(train_logistic(x.view(), &[true, true, true], &LogisticConfig::default()).is_err());
    }
}
