//! Diagonal-covariance Gaussian mixtures fitted by Expectation-Maximization.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans_plus_plus;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Convergence threshold on the change of the average log-likelihood.
    pub tol: f64,
    pub seed: u64,
    /// Lower bound on every component variance. The default suits features
    /// scaled to [0, 1]; one-hot columns that are constant inside a
    /// component otherwise dominate the log-likelihood.
    pub variance_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_iters: 200,
            tol: 1e-4,
            seed: 0,
            variance_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub final_avg_log_likelihood: f64,
    /// Average log-likelihood of the parameters at every E-step, in order.
    #[serde(default)]
    pub log_likelihood_trace: Vec<f64>,
    /// Components re-seeded after collapsing to zero mass.
    #[serde(default)]
    pub reseeds: usize,
}

/// Mixture weights, component means and diagonal variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct GmmParams<F> {
    pub weights: Vec<F>,
    pub means: Vec<Vec<F>>,
    pub variances: Vec<Vec<F>>,
    pub d: usize,
    pub k: usize,
    #[serde(default)]
    pub fit: FitInfo,
}

/// Per-component terms precomputed for density evaluation.
struct Evaluator<F> {
    log_norm: Vec<F>,
    inv_var: Vec<Vec<F>>,
}

impl<F: Scalar> GmmParams<F> {
    /// Builds parameters by hand, checking shapes and the weight simplex.
    pub fn new(weights: Vec<F>, means: Vec<Vec<F>>, variances: Vec<Vec<F>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::EmptyInput("mixture with no components"));
        }
        let d = means.first().map_or(0, Vec::len);
        if d == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Contract("mixture shape mismatch".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != d || v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: m.len().min(v.len()) });
            }
            if v.iter().any(|&s| !(s > F::zero())) {
                return Err(Error::Contract("variances must be positive".into()));
            }
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if weights.iter().any(|&w| w < F::zero()) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("weights must lie on the simplex (sum {total})")));
        }
        Ok(Self { weights, means, variances, d, k, fit: FitInfo::default() })
    }

    fn evaluator(&self) -> Evaluator<F> {
        let half = F::of(0.5);
        let two_pi = F::of(2.0 * PI);
        let log_norm = (0..self.k)
            .map(|j| {
                let s: F = self.variances[j].iter().map(|&v| (two_pi * v).ln()).sum();
                self.weights[j].ln() - half * s
            })
            .collect();
        let inv_var = self
            .variances
            .iter()
            .map(|v| v.iter().map(|&s| F::one() / s).collect())
            .collect();
        Evaluator { log_norm, inv_var }
    }

    fn component_log_terms(&self, ev: &Evaluator<F>, x: &[F], out: &mut Vec<F>) {
        let half = F::of(0.5);
        out.clear();
        for j in 0..self.k {
            let mut q = F::zero();
            for ((&xi, &mu), &iv) in x.iter().zip(&self.means[j]).zip(&ev.inv_var[j]) {
                let diff = xi - mu;
                q += diff * diff * iv;
            }
            out.push(ev.log_norm[j] - half * q);
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, actual: d });
        }
        Ok(())
    }

    /// `ln Σ_j π_j N(x | μ_j, diag σ²_j)` via log-sum-exp.
    pub fn log_likelihood(&self, x: &[F]) -> Result<F> {
        self.check_dim(x.len())?;
        let ev = self.evaluator();
        let mut terms = Vec::with_capacity(self.k);
        self.component_log_terms(&ev, x, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// Row-wise [`log_likelihood`](Self::log_likelihood).
    pub fn batch_log_likelihood(&self, data: ArrayView2<F>) -> Result<Vec<F>> {
        self.check_dim(data.ncols())?;
        let ev = self.evaluator();
        let rows: Vec<Vec<F>> = data.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(rows
            .par_iter()
            .map_init(
                || Vec::with_capacity(self.k),
                |terms, row| {
                    self.component_log_terms(&ev, row, terms);
                    log_sum_exp(terms)
                },
            )
            .collect())
    }

    /// Posterior component probabilities, one row per sample.
    pub fn responsibilities(&self, data: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_dim(data.ncols())?;
        let (resp, _) = e_step(self, data);
        Ok(resp)
    }

    /// Draws `n` samples. Returns the samples and their component indices.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> (Array2<F>, Vec<usize>) {
        let weights: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let picker = rand::distr::weighted::WeightedIndex::new(&weights).expect("mixture weights are valid");
        let mut out = Array2::zeros((n, self.d));
        let mut comps = Vec::with_capacity(n);
        for i in 0..n {
            let j = rand_distr::Distribution::sample(&picker, rng);
            comps.push(j);
            for c in 0..self.d {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                out[[i, c]] = self.means[j][c] + self.variances[j][c].sqrt() * F::of(z);
            }
        }
        (out, comps)
    }
}

fn e_step<F: Scalar>(params: &GmmParams<F>, data: ArrayView2<F>) -> (Array2<F>, F) {
    let ev = params.evaluator();
    let rows: Vec<(Vec<F>, F)> = (0..data.nrows())
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(params.k), Vec::with_capacity(params.d)),
            |(terms, row), i| {
                row.clear();
                row.extend(data.row(i).iter().copied());
                params.component_log_terms(&ev, row, terms);
                let ll = log_sum_exp(terms);
                (terms.iter().map(|&t| (t - ll).exp()).collect(), ll)
            },
        )
        .collect();
    let mut resp = Array2::zeros((data.nrows(), params.k));
    let mut total = F::zero();
    for (i, (r, ll)) in rows.into_iter().enumerate() {
        for (j, v) in r.into_iter().enumerate() {
            resp[[i, j]] = v;
        }
        total += ll;
    }
    (resp, total / F::of_usize(data.nrows()))
}

fn column_variance<F: Scalar>(data: ArrayView2<F>, floor: F) -> Vec<F> {
    let n = F::of_usize(data.nrows());
    (0..data.ncols())
        .map(|c| {
            let col = data.column(c);
            let mean = col.iter().copied().sum::<F>() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            var.max(floor)
        })
        .collect()
}

/// Fits a `config.k`-component diagonal mixture to the rows of `data`.
///
/// Means start at k-means++ seeds drawn from a subsample of at most
/// `10·k·d` rows; every variance starts at the floored global variance.
/// EM stops when the average log-likelihood changes by less than `tol` or
/// after `max_iters` M-steps.
pub fn fit_gmm<F: Scalar>(data: ArrayView2<F>, config: &GmmConfig) -> Result<GmmParams<F>> {
    let (n, d) = data.dim();
    let k = config.k;
    if k == 0 || n < k {
        return Err(Error::InfeasibleFit { n, k });
    }
    if d == 0 {
        return Err(Error::EmptyInput("data has no columns"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite value in mixture input".into()));
    }
    if !(config.variance_floor > 0.0) {
        return Err(Error::Config("variance floor must be positive".into()));
    }
    let floor = F::of(config.variance_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let m = n.min(10 * k * d).max(k);
    let mut pool: Vec<usize> = sample(&mut rng, n, m).into_vec();
    pool.sort_unstable();
    let sub = data.select(ndarray::Axis(0), &pool);
    let seeds = kmeans_plus_plus(sub.view(), k, None, &mut rng);

    let global_var = column_variance(data, floor);
    let mut params = GmmParams {
        weights: vec![F::one() / F::of_usize(k); k],
        means: seeds.iter().map(|&s| sub.row(s).to_vec()).collect(),
        variances: vec![global_var.clone(); k],
        d,
        k,
        fit: FitInfo::default(),
    };

    let nf = F::of_usize(n);
    let mass_floor = F::epsilon() * nf;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut reseeds = 0;
    let mut iterations = 0;
    loop {
        let (resp, avg) = e_step(&params, data);
        let avg = avg.as_f64();
        if let Some(&prev) = trace.last() {
            if (avg - prev).abs() < config.tol {
                trace.push(avg);
                converged = true;
                break;
            }
        }
        trace.push(avg);
        if iterations == config.max_iters {
            break;
        }
        iterations += 1;

        for j in 0..k {
            let mut mass = F::zero();
            let mut sum = vec![F::zero(); d];
            for i in 0..n {
                let r = resp[[i, j]];
                mass += r;
                for c in 0..d {
                    sum[c] += r * data[[i, c]];
                }
            }
            if mass <= mass_floor {
                let i = rng.random_range(0..n);
                params.means[j] = data.row(i).to_vec();
                params.variances[j] = global_var.clone();
                params.weights[j] = F::one() / nf;
                reseeds += 1;
                log::debug!("mixture component {j} collapsed; re-seeded at row {i}");
                continue;
            }
            let mean: Vec<F> = sum.iter().map(|&s| s / mass).collect();
            let mut var = vec![F::zero(); d];
            for i in 0..n {
                let r = resp[[i, j]];
                for c in 0..d {
                    let diff = data[[i, c]] - mean[c];
                    var[c] += r * diff * diff;
                }
            }
            params.variances[j] = var.iter().map(|&v| (v / mass).max(floor)).collect();
            params.means[j] = mean;
            params.weights[j] = mass / nf;
        }
        let total: F = params.weights.iter().copied().sum();
        for w in &mut params.weights {
            *w /= total;
        }
    }

    params.fit = FitInfo {
        iterations,
        converged,
        final_avg_log_likelihood: *trace.last().expect("at least one E-step"),
        log_likelihood_trace: trace,
        reseeds,
    };
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(10.0, 1.0).unwrap();
        let mut v = Vec::new();
        let mut labels = Vec::new();
        for i in 0..1000 {
            if i < 500 {
                v.push(a.sample(&mut rng));
                labels.push(0);
            } else {
                v.push(b.sample(&mut rng));
                labels.push(1);
            }
        }
        (Array2::from_shape_vec((1000, 1), v).unwrap(), labels)
    }

    #[test]
    fn recovers_two_well_separated_components() {
        let (x, labels) = blobs(5);
        // oracle: per-label sample means
        let oracle: Vec<f64> = (0..2)
            .map(|c| {
                let v: Vec<f64> = labels.iter().zip(x.iter()).filter(|(&l, _)| l == c).map(|(_, &v)| v).collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let cfg = GmmConfig { k: 2, seed: 1, ..Default::default() };
        let g = fit_gmm(x.view(), &cfg).unwrap();
        let mut comps: Vec<(f64, f64)> = (0..2).map(|j| (g.means[j][0], g.weights[j])).collect();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((comps[0].0 - 0.0).abs() < 0.3 && (comps[0].0 - oracle[0]).abs() < 0.05);
        assert!((comps[1].0 - 10.0).abs() < 0.3 && (comps[1].0 - oracle[1]).abs() < 0.05);
        assert!((comps[0].1 - 0.5).abs() < 0.05 && (comps[1].1 - 0.5).abs() < 0.05);
    }

    #[test]
    fn single_component_is_closed_form() {
        let x = ndarray::array![[1.0, 5.0], [2.0, 5.0], [4.0, 5.0], [9.0, 5.0]];
        let g = fit_gmm(x.view(), &GmmConfig { k: 1, ..Default::default() }).unwrap();
        let n = 4.0;
        let mean0 = (1.0 + 2.0 + 4.0 + 9.0) / n;
        let var0 = [1.0f64, 2.0, 4.0, 9.0].iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>() / n;
        assert_eq!(g.means[0], vec![mean0, 5.0]);
        assert_eq!(g.variances[0], vec![var0, 1e-3]);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn infeasible_and_dimension_errors() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            fit_gmm(x.view(), &GmmConfig { k: 4, ..Default::default() }),
            Err(Error::InfeasibleFit { n: 3, k: 4 })
        ));
        let g = GmmParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        assert!(matches!(g.log_likelihood(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(g.batch_log_likelihood(x.view()).is_err());
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = GmmParams::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        let v = g.log_likelihood(&[0.0]).unwrap();
        assert!((v - (-0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        assert!((v + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn identical_components_collapse() {
        let one = GmmParams::new(vec![1.0], vec![vec![0.3, -1.0]], vec![vec![2.0, 0.5]]).unwrap();
        let two = GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![0.3, -1.0], vec![0.3, -1.0]],
            vec![vec![2.0, 0.5], vec![2.0, 0.5]],
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-40.0, 10.0]] {
            let a: f64 = one.log_likelihood(&x).unwrap();
            let b: f64 = two.log_likelihood(&x).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn far_points_stay_finite() {
        let g = GmmParams::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![vec![1e-6], vec![1e-6]]).unwrap();
        let v: f64 = g.log_likelihood(&[1e4]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn works_in_f32() {
        let (x, _) = blobs(2);
        let x32 = x.mapv(|v| v as f32);
        let g = fit_gmm(x32.view(), &GmmConfig { k: 2, seed: 3, ..Default::default() }).unwrap();
        let mut m: Vec<f32> = g.means.iter().map(|m| m[0]).collect();
        m.sort_by(|a, b| a.total_cmp(b));
        assert!((m[0] - 0.0).abs() < 0.3 && (m[1] - 10.0).abs() < 0.3);
    }

    #[test]
    fn json_round_trip() {
        let (x, _) = blobs(9);
        let g = fit_gmm(x.view(), &GmmConfig { k: 2, ..Default::default() }).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: GmmParams<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn sampling_matches_moments() {
        let g = GmmParams::new(vec![1.0], vec![vec![3.0]], vec![vec![4.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (s, comps) = g.sample(20_000, &mut rng);
        assert!(comps.iter().all(|&c| c == 0));
        let mean = s.iter().sum::<f64>() / 20_000.0;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 20_000.0;
        assert!((mean - 3.0).abs() < 0.05);
        assert!((var - 4.0).abs() < 0.15);
    }
}
