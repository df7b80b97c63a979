use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub stratified: bool,
    /// Classes with a single record; the record went to the training side.
    pub singleton_classes: Vec<String>,
}

/// Stratified, seeded partition into `(train, test)`.
///
/// Strata come from visible labels, else from hidden truth, else the whole
/// dataset is one stratum. The training side receives `round(fraction * n)`
/// records, apportioned across strata by largest remainder. Both sides keep
/// the original record order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset, SplitReport)> {
    let (train_idx, test_idx, report) = split_indices(dataset, train_fraction, seed)?;
    Ok((dataset.subset(&train_idx)?, dataset.subset(&test_idx)?, report))
}

/// Index form of [`split`]: sorted train and test row indices.
pub fn split_indices(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>, SplitReport)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n = dataset.len();
    let strata_labels: Option<Vec<usize>> = dataset
        .labels()
        .or_else(|| dataset.hidden_truth().map(<[usize]>::to_vec));
    let mut report = SplitReport {
        stratified: strata_labels.is_some(),
        ..Default::default()
    };

    let mut groups: Vec<Vec<usize>> = match &strata_labels {
        Some(labels) => {
            let mut g = vec![Vec::new(); dataset.schema().n_classes()];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g
        }
        None => vec![(0..n).collect()],
    };

    let target = (train_fraction * n as f64).round() as usize;
    let mut quota = vec![0usize; groups.len()];
    let mut remainders = Vec::new();
    let mut assigned = 0;
    for (c, g) in groups.iter().enumerate() {
        match g.len() {
            0 => {}
            1 => {
                quota[c] = 1;
                assigned += 1;
                if strata_labels.is_some() {
                    report.singleton_classes.push(dataset.schema().classes[c].clone());
                }
            }
            len => {
                let exact = train_fraction * len as f64;
                quota[c] = exact.floor() as usize;
                assigned += quota[c];
                remainders.push((exact - exact.floor(), c));
            }
        }
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut extra = target.saturating_sub(assigned);
    for &(_, c) in &remainders {
        if extra == 0 {
            break;
        }
        if quota[c] < groups[c].len() {
            quota[c] += 1;
            extra -= 1;
        }
    }
    if !report.singleton_classes.is_empty() {
        log::warn!("singleton classes sent to training side: {:?}", report.singleton_classes);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(target);
    let mut test_idx = Vec::with_capacity(n - target.min(n));
    for (g, &q) in groups.iter_mut().zip(&quota) {
        g.shuffle(&mut rng);
        train_idx.extend_from_slice(&g[..q]);
        test_idx.extend_from_slice(&g[q..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((train_idx, test_idx, report))
}
