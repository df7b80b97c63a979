//! Seeded (optionally weighted) k-means with k-means++ seeding.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self { k, max_iters: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult<F> {
    pub centroids: Array2<F>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Empty clusters re-seeded during Lloyd iterations.
    pub reseeds: usize,
}

pub(crate) fn sq_dist<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn pick_weighted<F: Scalar>(rng: &mut ChaCha8Rng, mass: &[F]) -> Option<usize> {
    let total: f64 = mass.iter().map(|m| m.as_f64()).sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, m) in mass.iter().enumerate() {
        let m = m.as_f64();
        if m > 0.0 {
            last = Some(i);
            if u < m {
                return Some(i);
            }
            u -= m;
        }
    }
    last
}

/// k-means++ seeding; returns the row indices of the chosen centres.
/// With `weights`, selection probabilities are proportional to `w · D²`.
pub fn kmeans_plus_plus<F: Scalar>(
    x: ArrayView2<F>,
    k: usize,
    weights: Option<&[F]>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = x.nrows();
    let w = |i: usize| weights.map_or(F::one(), |w| w[i]);
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first_mass: Vec<F> = (0..n).map(w).collect();
    let first = pick_weighted(rng, &first_mass).unwrap_or_else(|| rng.random_range(0..n));
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<F> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    while chosen.len() < k.min(n) {
        let mass: Vec<F> = (0..n)
            .map(|i| if taken[i] { F::zero() } else { w(i) * d2[i] })
            .collect();
        let next = pick_weighted(rng, &mass).unwrap_or_else(|| {
            // All remaining points coincide with a centre (or carry no weight).
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        });
        chosen.push(next);
        taken[next] = true;
        for i in 0..n {
            let d = sq_dist(x.row(i), x.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

pub(crate) fn assign<F: Scalar>(x: ArrayView2<F>, centroids: &Array2<F>) -> Vec<(usize, F)> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut best = (0, F::infinity());
            for (j, c) in centroids.rows().into_iter().enumerate() {
                let d = sq_dist(x.row(i), c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd iterations from k-means++ seeds. Centroids are weighted means when
/// `weights` is given; a cluster whose members all carry zero weight falls
/// back to the plain mean. An empty cluster is re-seeded at the point
/// farthest from its current centroid.
pub fn kmeans<F: Scalar>(
    x: ArrayView2<F>,
    weights: Option<&[F]>,
    config: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansResult<F>> {
    let (n, d) = x.dim();
    let k = config.k;
    if k == 0 || n < k {
        return Err(Error::InfeasibleFit { n, k });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: w.len() });
        }
    }
    let seeds = kmeans_plus_plus(x, k, weights, rng);
    let mut centroids = Array2::zeros((k, d));
    for (j, &s) in seeds.iter().enumerate() {
        centroids.row_mut(j).assign(&x.row(s));
    }

    let mut assignments = vec![usize::MAX; n];
    let mut reseeds = 0;
    let mut iterations = 0;
    for _ in 0..config.max_iters.max(1) {
        iterations += 1;
        let assigned = assign(x, &centroids);
        let mut changed = false;
        for (a, &(j, _)) in assignments.iter_mut().zip(&assigned) {
            if *a != j {
                *a = j;
                changed = true;
            }
        }

        let mut sum_w = Array2::<F>::zeros((k, d));
        let mut sum_u = Array2::<F>::zeros((k, d));
        let mut mass_w = vec![F::zero(); k];
        let mut count = vec![0usize; k];
        for i in 0..n {
            let j = assignments[i];
            let wi = weights.map_or(F::one(), |w| w[i]);
            count[j] += 1;
            mass_w[j] += wi;
            for c in 0..d {
                sum_w[[j, c]] += wi * x[[i, c]];
                sum_u[[j, c]] += x[[i, c]];
            }
        }
        let mut reseeded_now = false;
        for j in 0..k {
            if count[j] == 0 {
                // farthest point from its own centroid that is not alone in its cluster
                let far = (0..n)
                    .filter(|&i| count[assignments[i]] > 1)
                    .max_by(|&a, &b| assigned[a].1.partial_cmp(&assigned[b].1).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a)));
                if let Some(i) = far {
                    count[assignments[i]] -= 1;
                    centroids.row_mut(j).assign(&x.row(i));
                    assignments[i] = j;
                    count[j] = 1;
                    reseeds += 1;
                    reseeded_now = true;
                }
                continue;
            }
            if mass_w[j] > F::zero() {
                for c in 0..d {
                    centroids[[j, c]] = sum_w[[j, c]] / mass_w[j];
                }
            } else {
                let cnt = F::of_usize(count[j]);
                for c in 0..d {
                    centroids[[j, c]] = sum_u[[j, c]] / cnt;
                }
            }
        }
        if !changed && !reseeded_now {
            break;
        }
    }
    // final assignment consistent with the returned centroids
    let final_assign = assign(x, &centroids);
    let assignments = final_assign.iter().map(|&(j, _)| j).collect();
    Ok(KMeansResult {
        centroids,
        assignments,
        iterations,
        reseeds,
    })
}

/// For each cluster, the member closest to its centroid (`None` for empty
/// clusters). Ties go to the lower row index.
pub fn nearest_members<F: Scalar>(x: ArrayView2<F>, result: &KMeansResult<F>) -> Vec<Option<usize>> {
    let k = result.centroids.nrows();
    let mut best: Vec<Option<(usize, F)>> = vec![None; k];
    for (i, &j) in result.assignments.iter().enumerate() {
        let d = sq_dist(x.row(i), result.centroids.row(j));
        match best[j] {
            Some((_, bd)) if bd <= d => {}
            _ => best[j] = Some((i, d)),
        }
    }
    best.into_iter().map(|b| b.map(|(i, _)| i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn separates_two_blobs() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = kmeans(x.view(), None, &KMeansConfig::new(2), &mut rng).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[3], r.assignments[5]);
        assert_ne!(r.assignments[0], r.assignments[3]);
        let near = nearest_members(x.view(), &r);
        assert!(near.iter().all(Option::is_some));
    }

    #[test]
    fn weighted_single_cluster_is_weighted_mean() {
        let x = array![[0.0], [1.0], [5.0]];
        let w = [0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = kmeans(x.view(), Some(&w), &KMeansConfig::new(1), &mut rng).unwrap();
        assert_eq!(r.centroids[[0, 0]], 5.0);
        assert_eq!(nearest_members(x.view(), &r), vec![Some(2)]);
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let x = Array2::<f64>::zeros((5, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seeds = kmeans_plus_plus(x.view(), 5, None, &mut rng);
        let mut s = seeds.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn infeasible() {
        let x = Array2::<f64>::zeros((2, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kmeans(x.view(), None, &KMeansConfig::new(3), &mut rng),
            Err(Error::InfeasibleFit { .. })
        ));
    }
}
