//! Exact one-dimensional Wasserstein distances between empirical samples.

use ndarray::ArrayView2;

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

fn sorted<F: Scalar>(v: &[F]) -> Result<Vec<F>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(contract("NaN in distance input"));
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(s)
}

/// Walks both empirical quantile functions on the merged grid of CDF
/// levels and calls `f(mass, qa, qb)` on every constant piece. Levels are
/// tracked as integers in units of `1/(n·m)` so the grid is exact.
fn for_each_quantile_piece<F: Scalar>(a: &[F], b: &[F], mut f: impl FnMut(F, F, F)) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("distance needs two non-empty samples"));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len() as u128, b.len() as u128);
    let total = F::of((n * m) as f64);
    let (mut i, mut j, mut level) = (0usize, 0usize, 0u128);
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        f(F::of((next - level) as f64) / total, a[i], b[j]);
        level = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(())
}

/// Earth mover's (W1) distance: `∫ |Q_a(u) − Q_b(u)| du`.
pub fn emd_1d<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    let mut acc = F::zero();
    for_each_quantile_piece(a, b, |w, x, y| acc += w * (x - y).abs())?;
    Ok(acc)
}

/// W2 distance: `sqrt ∫ (Q_a(u) − Q_b(u))² du`.
pub fn w2_1d<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    let mut acc = F::zero();
    for_each_quantile_piece(a, b, |w, x, y| acc += w * (x - y) * (x - y))?;
    Ok(acc.sqrt())
}

/// Mean over columns of the per-column distance `dist`.
pub fn mean_columnwise<F: Scalar>(
    a: ArrayView2<F>,
    b: ArrayView2<F>,
    dist: fn(&[F], &[F]) -> Result<F>,
) -> Result<F> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), actual: b.ncols() });
    }
    if a.ncols() == 0 {
        return Err(Error::EmptyInput("no columns to compare"));
    }
    let mut total = F::zero();
    for c in 0..a.ncols() {
        total += dist(&a.column(c).to_vec(), &b.column(c).to_vec())?;
    }
    Ok(total / F::of_usize(a.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        assert_eq!(emd_1d(&[0.3, 1.0, 0.3], &[1.0, 0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(emd_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(emd_1d(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(w2_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w2_1d(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn unequal_sizes() {
        // {0,1} vs {0,0.5,1}: quantile pieces of mass 1/3, 1/6, 1/6, 1/3
        let d: f64 = emd_1d(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((d - (1.0 / 6.0) * 0.5 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(emd_1d::<f64>(&[], &[1.0]).is_err());
        assert!(w2_1d(&[f64::NAN], &[1.0]).is_err());
    }
}
