//! Shared numeric kernels: chi-square tails, pooled moments, generalized
//! inverses and quadratic-form test statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff used when deciding the rank of a symmetric matrix.
pub const RANK_TOL: f64 = 1e-10;

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chisq_pvalue(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Domain("chi-square needs df >= 1".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Mean and covariance (divisor `n`) of a set of equal-length samples.
pub fn pooled_moments<'a, I>(samples: I, dim: usize) -> (DVector<f64>, DMatrix<f64>)
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    let mut mean = DVector::zeros(dim);
    let mut n = 0usize;
    for s in samples.clone() {
        for k in 0..dim {
            mean[k] += s[k];
        }
        n += 1;
    }
    if n == 0 {
        return (mean, DMatrix::zeros(dim, dim));
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        for a in 0..dim {
            let da = s[a] - mean[a];
            for b in 0..dim {
                cov[(a, b)] += da * (s[b] - mean[b]);
            }
        }
    }
    cov /= n as f64;
    (mean, cov)
}

/// Weighted variant of [`pooled_moments`]; weights are frequency counts.
pub fn weighted_moments(samples: &[(f64, &[f64])], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let total: f64 = samples.iter().map(|(w, _)| *w).sum();
    let mut mean = DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    if total <= 0.0 {
        return (mean, cov);
    }
    for (w, s) in samples {
        for k in 0..dim {
            mean[k] += w * s[k];
        }
    }
    mean /= total;
    for (w, s) in samples {
        for a in 0..dim {
            let da = s[a] - mean[a];
            for b in 0..dim {
                cov[(a, b)] += w * da * (s[b] - mean[b]);
            }
        }
    }
    cov /= total;
    (mean, cov)
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Moore-Penrose inverse of a symmetric matrix together with its numerical rank.
pub fn gen_inverse(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if !a.is_square() {
        return Err(Error::Domain("generalized inverse needs a square matrix".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = scale * RANK_TOL;
    let mut inv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if scale == 0.0 || lambda.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / lambda;
    }
    Ok((inv, rank))
}

/// Symmetrizes and clips negative eigenvalues to zero. The flag reports
/// whether any eigenvalue was materially negative.
pub fn project_psd(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut projected = false;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < 0.0 {
            if lambda.abs() > scale * RANK_TOL {
                projected = true;
            }
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) * lambda;
    }
    (out, projected)
}

/// `uᵀ V⁻ u` with `df = rank(V)`.
///
/// A score with a material component outside the column space of `V` cannot be
/// referred to a chi-square law and is reported as not testable.
pub fn quadratic_statistic(u: &DVector<f64>, v: &DMatrix<f64>) -> Result<(f64, usize)> {
    let (inv, rank) = gen_inverse(v)?;
    if rank == 0 {
        if u.amax() == 0.0 {
            return Err(Error::NotTestable("score variance is zero".into()));
        }
        return Err(Error::NotTestable("score variance is zero but score is not".into()));
    }
    let proj = v * (&inv * u);
    let resid = (u - proj).norm();
    if resid > 1e-6 * u.norm().max(1e-300) && resid > 1e-12 {
        return Err(Error::NotTestable(
            "score lies outside the range of its variance".into(),
        ));
    }
    let stat = (u.transpose() * &inv * u)[(0, 0)];
    Ok((stat.max(0.0), rank))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chisq_edge_values() {
        assert_eq!(chisq_pvalue(0.0, 1).unwrap(), 1.0);
        assert!((chisq_pvalue(3.841, 1).unwrap() - 0.05).abs() < 1e-3);
        assert!(matches!(chisq_pvalue(-1.0, 1), Err(Error::Domain(_))));
        assert!(chisq_pvalue(1.0, 0).is_err());
    }

    #[test]
    fn chisq_two_df_closed_form() {
        // df = 2 tail is exp(-x/2)
        for &x in &[0.1, 1.0, 5.0, 20.0, 80.0] {
            let p = chisq_pvalue(x, 2).unwrap();
            let exact = (-x / 2.0_f64).exp();
            assert!(((p - exact) / exact).abs() < 1e-10, "x={x} p={p} exact={exact}");
        }
    }

    #[test]
    fn gen_inverse_identity_and_singular() {
        let id = DMatrix::<f64>::identity(3, 3);
        let (inv, rank) = gen_inverse(&id).unwrap();
        assert_eq!(rank, 3);
        assert!((inv - id).amax() < 1e-14);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (inv, rank) = gen_inverse(&a).unwrap();
        assert_eq!(rank, 1);
        assert!((&a * &inv * &a - &a).amax() < 1e-12);
    }

    #[test]
    fn psd_projection_flags_negative_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (p, flagged) = project_psd(&a);
        assert!(flagged);
        assert!((p[(1, 1)]).abs() < 1e-14);
        let (_, flagged) = project_psd(&DMatrix::identity(2, 2));
        assert!(!flagged);
    }

    #[test]
    fn quadratic_rejects_score_outside_range() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(quadratic_statistic(&u, &v), Err(Error::NotTestable(_))));
        let u = DVector::from_vec(vec![2.0, 0.0]);
        let (s, df) = quadratic_statistic(&u, &v).unwrap();
        assert_eq!(df, 1);
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_matches_expanded() {
        let a = [1.0, 2.0];
        let b = [3.0, -1.0];
        let w = weighted_moments(&[(2.0, &a), (1.0, &b)], 2);
        let flat = [&a[..], &a[..], &b[..]];
        let p = pooled_moments(flat.iter().copied(), 2);
        assert!((w.0 - p.0).amax() < 1e-14);
        assert!((w.1 - p.1).amax() < 1e-14);
    }
}
