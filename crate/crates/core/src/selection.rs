//! Budgeted prior selection over unlabeled target flows.
//!
//! The primary strategy ranks every target sample by how much more likely it
//! is under the target-domain mixture than under the source-domain mixture.
//! Entropy ranking, coreset (k-means centers) and CLUE (entropy-weighted
//! k-means) are provided for comparison and share the same report type.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{contract, Error, Result};
use crate::gmm::GmmParams;
use crate::kmeans::{kmeans, nearest_members, sq_dist, KMeansConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Log-likelihood difference between the target and source mixtures.
    Netguard,
    Uncertainty,
    Coreset,
    Clue,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Netguard => "netguard",
            Strategy::Uncertainty => "uncertainty",
            Strategy::Coreset => "coreset",
            Strategy::Clue => "clue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: Strategy,
    /// Per-sample scores in X_UL order. Coreset has none.
    pub scores: Option<Vec<f64>>,
    /// Chosen X_UL indices. Ranked strategies list them best first.
    pub selected: Vec<usize>,
    pub budget: usize,
    pub n_unlabeled: usize,
    /// Filled once the oracle has labeled the batch.
    pub class_counts: Option<BTreeMap<String, usize>>,
    pub tie_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl SelectionReport {
    /// Records per-class counts of the selected batch.
    pub fn record_labels(&mut self, labels: &[usize], classes: &[String]) -> Result<()> {
        if labels.len() != self.selected.len() {
            return Err(Error::DimensionMismatch { expected: self.selected.len(), actual: labels.len() });
        }
        let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
        for &l in labels {
            let name = classes.get(l).ok_or_else(|| contract(format!("label {l} outside vocabulary")))?;
            *counts.get_mut(name).expect("seeded above") += 1;
        }
        self.class_counts = Some(counts);
        Ok(())
    }

    /// JSON form; the score vector is dropped when longer than `score_cap`.
    pub fn to_json(&self, score_cap: usize) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report is plain data");
        if self.scores.as_ref().is_some_and(|s| s.len() > score_cap) {
            v["scores"] = serde_json::Value::Null;
            v["scores_elided"] = serde_json::Value::Bool(true);
        }
        v
    }

    pub fn is_valid(&self) -> bool {
        let mut seen = vec![false; self.n_unlabeled];
        for &i in &self.selected {
            if i >= self.n_unlabeled || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        self.selected.len() == self.budget.min(self.n_unlabeled)
    }
}

/// `max(1, floor(fraction · n))`. The small epsilon keeps fractions such as
/// 0.07 of 100 from flooring to 6 through binary rounding.
pub fn budget_count(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("budget fraction {fraction} outside (0, 1]")));
    }
    Ok(((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1)))
}

/// `ll_target(x) − ll_source(x)` for every row of `x`.
pub fn informativeness_scores<F: Scalar>(
    target: &GmmParams<F>,
    source: &GmmParams<F>,
    x: ArrayView2<F>,
) -> Result<Vec<F>> {
    if target.d != source.d {
        return Err(Error::DimensionMismatch { expected: target.d, actual: source.d });
    }
    let ll_t = target.batch_log_likelihood(x)?;
    let ll_s = source.batch_log_likelihood(x)?;
    let scores: Vec<F> = ll_t.iter().zip(&ll_s).map(|(&a, &b)| a - b).collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(contract(format!("non-finite informativeness score at row {i}")));
    }
    Ok(scores)
}

/// Descending order; equal scores are ordered by a seeded permutation.
fn rank_desc(scores: &[f64], tie_seed: u64) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(contract("NaN score"));
    }
    let mut shuffle: Vec<usize> = (0..scores.len()).collect();
    shuffle.shuffle(&mut ChaCha8Rng::seed_from_u64(tie_seed));
    let mut rank = vec![0usize; scores.len()];
    for (r, &i) in shuffle.iter().enumerate() {
        rank[i] = r;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("no NaN")
            .then(rank[a].cmp(&rank[b]))
            .then(a.cmp(&b))
    });
    Ok(order)
}

fn select_top(strategy: Strategy, scores: Vec<f64>, budget: usize, tie_seed: u64) -> Result<SelectionReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to select from"));
    }
    let n = scores.len();
    let mut order = rank_desc(&scores, tie_seed)?;
    order.truncate(budget.min(n));
    Ok(SelectionReport {
        strategy,
        scores: Some(scores),
        selected: order,
        budget,
        n_unlabeled: n,
        class_counts: None,
        tie_seed,
        flags: Vec::new(),
    })
}

/// Top `max(1, floor(fraction · n))` samples by informativeness.
pub fn select_priors<F: Scalar>(scores: &[F], fraction: f64, tie_seed: u64) -> Result<SelectionReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to select from"));
    }
    let budget = budget_count(fraction, scores.len())?;
    select_top(Strategy::Netguard, scores.iter().map(|s| s.as_f64()).collect(), budget, tie_seed)
}

/// Shannon entropy (nats) of each probability row; `0 · ln 0 = 0`.
pub fn entropy_rows<F: Scalar>(p: ArrayView2<F>) -> Vec<F> {
    p.rows()
        .into_iter()
        .map(|r| {
            -r.iter()
                .filter(|&&v| v > F::zero())
                .map(|&v| v * v.ln())
                .sum::<F>()
        })
        .collect()
}

pub fn uncertainty_scores<F: Scalar, M: Classifier<F> + ?Sized>(model: &M, x: ArrayView2<F>) -> Result<Vec<F>> {
    if !model.is_trained() {
        return Err(contract("uncertainty scoring needs a trained model"));
    }
    Ok(entropy_rows(model.predict_proba(x)?.view()))
}

/// Top-`budget` samples by predictive entropy.
pub fn uncertainty_select<F: Scalar, M: Classifier<F> + ?Sized>(
    model: &M,
    x: ArrayView2<F>,
    budget: usize,
    tie_seed: u64,
) -> Result<SelectionReport> {
    let scores = uncertainty_scores(model, x)?;
    select_top(Strategy::Uncertainty, scores.iter().map(|s| s.as_f64()).collect(), budget, tie_seed)
}

/// One representative per k-means cluster (k = budget). If a cluster ends
/// up empty, the remaining slots go to the unselected points farthest from
/// their centroids.
fn cluster_select<F: Scalar>(
    x: ArrayView2<F>,
    weights: Option<&[F]>,
    budget: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("no samples to cluster"));
    }
    if budget == 0 {
        return Err(contract("budget must be at least 1"));
    }
    if budget >= n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmeans(x, weights, &KMeansConfig::new(budget), &mut rng)?;
    let mut selected: Vec<usize> = nearest_members(x, &km).into_iter().flatten().collect();
    if selected.len() < budget {
        let mut taken = vec![false; n];
        for &i in &selected {
            taken[i] = true;
        }
        let dist: Vec<F> = (0..n)
            .into_par_iter()
            .map(|i| sq_dist(x.row(i), km.centroids.row(km.assignments[i])))
            .collect();
        let mut rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
        rest.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        selected.extend(rest.into_iter().take(budget - selected.len()));
    }
    selected.sort_unstable();
    Ok(selected)
}

pub fn coreset_select<F: Scalar>(x: ArrayView2<F>, budget: usize, seed: u64) -> Result<SelectionReport> {
    let selected = cluster_select(x, None, budget, seed)?;
    Ok(SelectionReport {
        strategy: Strategy::Coreset,
        scores: None,
        selected,
        budget,
        n_unlabeled: x.nrows(),
        class_counts: None,
        tie_seed: seed,
        flags: Vec::new(),
    })
}

/// Entropy-weighted k-means with k = budget. Uniform entropies reduce to
/// [`coreset_select`] exactly; all-zero entropies fall back to unweighted
/// clustering and are flagged.
pub fn clue_select<F: Scalar, M: Classifier<F> + ?Sized>(
    model: &M,
    x: ArrayView2<F>,
    budget: usize,
    seed: u64,
) -> Result<SelectionReport> {
    let entropy = uncertainty_scores(model, x)?;
    clue_select_weighted(x, &entropy, budget, seed)
}

/// [`clue_select`] with precomputed per-sample weights.
pub fn clue_select_weighted<F: Scalar>(x: ArrayView2<F>, weights: &[F], budget: usize, seed: u64) -> Result<SelectionReport> {
    if weights.len() != x.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: weights.len() });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < F::zero()) {
        return Err(contract("CLUE weights must be finite and non-negative"));
    }
    let mut flags = Vec::new();
    let uniform = weights.windows(2).all(|w| w[0] == w[1]);
    let all_zero = weights.iter().all(|w| w.is_zero());
    if all_zero {
        flags.push("all-zero uncertainty weights; used unweighted k-means".to_string());
    }
    let w = (!uniform).then_some(weights);
    let selected = cluster_select(x, w, budget, seed)?;
    Ok(SelectionReport {
        strategy: Strategy::Clue,
        scores: Some(weights.iter().map(|v| v.as_f64()).collect()),
        selected,
        budget,
        n_unlabeled: x.nrows(),
        class_counts: None,
        tie_seed: seed,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn budget_grid() {
        assert_eq!(budget_count(0.01, 100_000).unwrap(), 1000);
        assert_eq!(budget_count(0.001, 100_000).unwrap(), 100);
        assert_eq!(budget_count(0.005, 100_000).unwrap(), 500);
        assert_eq!(budget_count(0.001, 10).unwrap(), 1);
        assert_eq!(budget_count(0.07, 100).unwrap(), 7);
        assert!(budget_count(0.0, 10).is_err());
        assert!(budget_count(1.5, 10).is_err());
    }

    #[test]
    fn sort_check() {
        let r = select_priors(&[5.0, 1.0, 9.0], 1.0, 0).unwrap();
        assert_eq!(r.selected, vec![2, 0, 1]);
        assert!(r.is_valid());
    }

    #[test]
    fn ties_are_seeded() {
        let s = vec![1.0f64; 50];
        let a = select_priors(&s, 0.2, 3).unwrap();
        let b = select_priors(&s, 0.2, 3).unwrap();
        let c = select_priors(&s, 0.2, 4).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_ne!(a.selected, c.selected);
        assert!(a.is_valid());
    }

    #[test]
    fn empty_scores() {
        assert!(matches!(select_priors::<f64>(&[], 0.5, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn entropy_values() {
        let u = Array2::from_elem((1, 11), 1.0 / 11.0);
        assert!((entropy_rows(u.view())[0] - 11f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_rows(array![[0.0, 1.0, 0.0]].view())[0], 0.0);
    }

    #[test]
    fn coreset_edges() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [10.0, 10.0]];
        let all = coreset_select(x.view(), 4, 1).unwrap();
        assert_eq!(all.selected, vec![0, 1, 2, 3]);
        let dup = Array2::<f64>::zeros((6, 2));
        let r = coreset_select(dup.view(), 3, 1).unwrap();
        assert!(r.is_valid());
    }

    #[test]
    fn clue_zero_weights_flagged() {
        let x = array![[0.0], [1.0], [5.0], [6.0]];
        let r = clue_select_weighted(x.view(), &[0.0; 4], 2, 0).unwrap();
        assert_eq!(r.flags.len(), 1);
        let c = coreset_select(x.view(), 2, 0).unwrap();
        assert_eq!(r.selected, c.selected);
    }

    #[test]
    fn json_elides_large_scores() {
        let r = select_priors(&[1.0, 2.0, 3.0], 0.5, 0).unwrap();
        assert!(r.to_json(2)["scores"].is_null());
        assert_eq!(r.to_json(10)["scores"].as_array().unwrap().len(), 3);
    }
}
