use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{contract, Error, Result};

/// Per-feature min-max map fitted on the training side only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Schema positions of the continuous features.
    pub columns: Vec<usize>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// `true` where the training column was constant; those map to 0.
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let columns = train.schema().continuous_indices();
        let mut min = vec![f64::INFINITY; columns.len()];
        let mut max = vec![f64::NEG_INFINITY; columns.len()];
        for r in train.records() {
            for (j, &c) in columns.iter().enumerate() {
                min[j] = min[j].min(r.values[c]);
                max[j] = max[j].max(r.values[c]);
            }
        }
        let constant: Vec<bool> = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        for (j, &c) in constant.iter().enumerate() {
            if c {
                log::warn!(
                    "feature {:?} is constant on the training set; mapped to 0",
                    train.schema().features[columns[j]].name
                );
            }
        }
        Ok(Self {
            columns,
            min,
            max,
            constant,
        })
    }

    pub fn has_warnings(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.schema().continuous_indices() != self.columns {
            return Err(contract("dataset layout differs from the fitted normalization"));
        }
        Ok(())
    }

    /// Applies the affine map; values outside the training range are kept.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        for r in &mut out.records {
            for (j, &c) in self.columns.iter().enumerate() {
                r.values[c] = if self.constant[j] {
                    0.0
                } else {
                    (r.values[c] - self.min[j]) / (self.max[j] - self.min[j])
                };
            }
        }
        Ok(out)
    }

    /// Maps normalized values back to training units. Constant columns
    /// return their training value.
    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let mut out = ds.clone();
        for r in &mut out.records {
            for (j, &c) in self.columns.iter().enumerate() {
                r.values[c] = if self.constant[j] {
                    self.min[j]
                } else {
                    self.min[j] + r.values[c] * (self.max[j] - self.min[j])
                };
            }
        }
        Ok(out)
    }
}

/// Fits min-max statistics on `train` and applies them to `train` and every
/// dataset in `others`.
pub fn normalize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, NormStats)> {
    if !train.is_labeled() {
        return Err(contract("normalization must be fitted on a labeled training set"));
    }
    let stats = NormStats::fit(train)?;
    let train_n = stats.apply(train)?;
    let others_n = others.iter().map(|d| stats.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((train_n, others_n, stats))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn ds(rows: &[(f64, f64)]) -> Dataset {
        Dataset::labeled(schema(), rows.iter().map(|&(a, b)| rec(0, a, b, 0)).collect()).unwrap()
    }

    #[test]
    fn min_max_and_extension() {
        let train = ds(&[(0.0, 7.0), (5.0, 7.0), (10.0, 7.0)]);
        let target = ds(&[(20.0, 1.0)]);
        let (tn, others, stats) = normalize(&train, &[&target]).unwrap();
        let col: Vec<f64> = tn.records().iter().map(|r| r.values[1]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
        assert!(tn.records().iter().all(|r| r.values[2] == 0.0));
        assert_eq!(stats.constant, vec![false, true]);
        assert!(stats.has_warnings());
        assert_eq!(others[0].records()[0].values[1], 2.0);
        assert_eq!(others[0].records()[0].values[0], 0.0, "categorical untouched");
    }

    #[test]
    fn stats_ignore_target_content() {
        let train = ds(&[(1.0, 2.0), (3.0, 9.0)]);
        let (_, _, a) = normalize(&train, &[&ds(&[(100.0, -4.0)])]).unwrap();
        let (_, _, b) = normalize(&train, &[&ds(&[(-7.0, 0.5), (3.0, 3.0)])]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invert_restores_values() {
        let train = ds(&[(1.0, 2.0), (3.0, 9.0), (2.5, 4.0)]);
        let (tn, _, stats) = normalize(&train, &[]).unwrap();
        let back = stats.invert(&tn).unwrap();
        for (x, y) in back.records().iter().zip(train.records()) {
            for (u, v) in x.values.iter().zip(&y.values) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn requires_labeled_train() {
        let train = ds(&[(1.0, 2.0)]).hide_labels().unwrap();
        assert!(normalize(&train, &[]).is_err());
    }
}
