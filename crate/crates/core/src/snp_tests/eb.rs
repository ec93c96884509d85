use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::mle::{fit_prospective_mle, fit_retrospective_mle, OddsRatioFit};
use crate::error::{Error, Result};
use crate::genotype::{CountsTable, GeneticModel};
use crate::numeric::{project_psd, quadratic_statistic};
use crate::result::{Method, TestResult};

/// Joint covariance of a model-free and a model-based estimate of the same
/// parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    pub free: DMatrix<f64>,
    pub model: DMatrix<f64>,
    /// `Cov(β_free, β_model)`.
    pub cross: DMatrix<f64>,
}

impl JointCovariance {
    /// Covariance of `β_free − β_model`.
    pub fn difference(&self) -> DMatrix<f64> {
        &self.free + &self.model - &self.cross - self.cross.transpose()
    }

    /// Joint covariance implied by a covariance of the difference when the
    /// model-based estimator is efficient, so that `Cov(free, model) = Var(model)`.
    pub fn from_difference(model: DMatrix<f64>, difference: DMatrix<f64>) -> Self {
        Self {
            free: &model + difference,
            cross: model.clone(),
            model,
        }
    }

    /// Sandwich estimate from per-cell influence functions, centred within
    /// the case and control strata.
    pub fn from_influence(free: &OddsRatioFit, model: &OddsRatioFit) -> Result<Self> {
        let k = free.beta.len();
        if model.beta.len() != k {
            return Err(Error::ContractViolation("fits have different dimensions".into()));
        }
        let find = |fit: &OddsRatioFit, d: u8, g: u8| {
            fit.cells
                .iter()
                .find(|c| c.d == d && c.g == g)
                .map(|c| (c.count, c.influence.clone()))
        };
        let mut out = Self {
            free: DMatrix::zeros(k, k),
            model: DMatrix::zeros(k, k),
            cross: DMatrix::zeros(k, k),
        };
        for d in 0..2u8 {
            let mut cells = Vec::new();
            for g in 0..3u8 {
                match (find(free, d, g), find(model, d, g)) {
                    (Some((n, a)), Some((_, b))) => cells.push((n, a, b)),
                    (None, None) => {}
                    _ => {
                        return Err(Error::ContractViolation(
                            "fits were computed on different tables".into(),
                        ))
                    }
                }
            }
            let total: f64 = cells.iter().map(|c| c.0).sum();
            if total == 0.0 {
                continue;
            }
            let mean_a = cells.iter().fold(DVector::zeros(k), |acc, c| acc + &c.1 * c.0) / total;
            let mean_b = cells.iter().fold(DVector::zeros(k), |acc, c| acc + &c.2 * c.0) / total;
            for (n, a, b) in &cells {
                let da = a - &mean_a;
                let db = b - &mean_b;
                out.free += (&da * da.transpose()) * *n;
                out.model += (&db * db.transpose()) * *n;
                out.cross += (&da * db.transpose()) * *n;
            }
        }
        Ok(out)
    }
}

/// Empirical-Bayes combination of a model-free and a model-based fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EbEstimate {
    pub beta: DVector<f64>,
    /// Weight on the model-based estimate per component.
    pub weights: DVector<f64>,
    /// Diagonal of the covariance of the difference.
    pub v: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub test: TestResult,
}

/// Componentwise shrinkage `β_EB = β_free + W(β_model − β_free)` with
/// `W = v/(v + (β_free − β_model)²)`.
///
/// The covariance comes from the delta method applied to
/// `β_EB = β_model + d³/(v + d²)`, `d = β_free − β_model`, treating `v` as fixed.
pub fn eb_shrink_estimates(free: &OddsRatioFit, model: &OddsRatioFit, joint: &JointCovariance) -> Result<EbEstimate> {
    shrink(&free.beta, &model.beta, joint, free.converged && model.converged)
}

pub(crate) fn shrink(
    free: &DVector<f64>,
    model: &DVector<f64>,
    joint: &JointCovariance,
    converged: bool,
) -> Result<EbEstimate> {
    let k = free.len();
    if model.len() != k || joint.free.nrows() != k || joint.model.nrows() != k || joint.cross.nrows() != k {
        return Err(Error::ContractViolation(
            "estimates and covariance disagree in dimension".into(),
        ));
    }
    if !converged {
        return Err(Error::ContractViolation("both fits must have converged".into()));
    }
    let v = joint.difference().diagonal().map(|x| x.max(0.0));
    let d = free - model;
    let mut weights = DVector::zeros(k);
    let mut slope = DVector::zeros(k);
    for j in 0..k {
        let d2 = d[j] * d[j];
        let denom = v[j] + d2;
        if denom > 0.0 {
            weights[j] = v[j] / denom;
            slope[j] = d2 * (d2 + 3.0 * v[j]) / (denom * denom);
        } else {
            weights[j] = 1.0;
        }
    }
    let beta = DVector::from_fn(k, |j, _| free[j] + weights[j] * (model[j] - free[j]));
    let jm = DMatrix::from_diagonal(&slope);
    let im = DMatrix::identity(k, k) - &jm;
    let mixed = &im * joint.cross.transpose() * &jm;
    let raw = &im * &joint.model * &im + &jm * &joint.free * &jm + &mixed + mixed.transpose();
    let (covariance, projected) = project_psd(&raw);
    let (stat, df) = quadratic_statistic(&beta, &covariance)?;
    let mut test = TestResult::new(Method::EbWald, stat, df)?;
    test.psd_projected = projected;
    for j in 0..k {
        let sfx = if k > 1 { format!("_{}", j + 1) } else { String::new() };
        test = test.with(&format!("eb_weight{sfx}"), weights[j]);
    }
    Ok(EbEstimate {
        beta,
        weights,
        v,
        covariance,
        test,
    })
}

/// Wald test of `β = 0` from a single fit.
pub fn wald_test(fit: &OddsRatioFit, method: Method) -> Result<TestResult> {
    let (stat, df) = quadratic_statistic(&fit.beta, &fit.covariance)?;
    let mut r = TestResult::new(method, stat, df)?;
    if let Some(f) = fit.f_hat {
        r = r.with("f_hat", f);
    }
    Ok(r)
}

/// Fits both likelihoods, combines them by empirical-Bayes shrinkage and
/// returns the Wald test of the shrunken estimate.
pub fn eb_wald_test(counts: &CountsTable, model: GeneticModel) -> Result<EbEstimate> {
    let free = fit_prospective_mle(counts, model)?;
    let based = fit_retrospective_mle(counts, model)?;
    let joint = JointCovariance::from_influence(&free, &based)?;
    let mut est = eb_shrink_estimates(&free, &based, &joint)?;
    if let Some(f) = based.f_hat {
        est.test = est.test.with("f_hat", f);
    }
    Ok(est)
}

fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64; 3], rng: &mut R) -> [u64; 3] {
    let mut out = [0u64; 3];
    let mut left = n;
    let mut mass = 1.0;
    for g in 0..2 {
        if left == 0 || mass <= 0.0 {
            break;
        }
        let p = (probs[g] / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
        out[g] = draw;
        left -= draw;
        mass -= probs[g];
    }
    out[2] += left;
    out
}

/// Nonparametric bootstrap of the joint covariance, resampling cases and
/// controls separately. Replicates where either fit fails are skipped; the
/// number of usable replicates is returned alongside.
pub fn bootstrap_joint_covariance<R: Rng + ?Sized>(
    counts: &CountsTable,
    model: GeneticModel,
    replicates: usize,
    rng: &mut R,
) -> Result<(JointCovariance, usize)> {
    let k = model.dim();
    let probs = |row: [u64; 3]| {
        let n: u64 = row.iter().sum();
        [
            row[0] as f64 / n as f64,
            row[1] as f64 / n as f64,
            row[2] as f64 / n as f64,
        ]
    };
    let p0 = probs(counts.controls());
    let p1 = probs(counts.cases());
    let mut draws: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let t = CountsTable::new(
            multinomial(counts.n_controls(), &p0, rng),
            multinomial(counts.n_cases(), &p1, rng),
        );
        if let (Ok(a), Ok(b)) = (fit_prospective_mle(&t, model), fit_retrospective_mle(&t, model)) {
            draws.push((a.beta, b.beta));
        }
    }
    if draws.len() < 2 {
        return Err(Error::NotTestable("too few usable bootstrap replicates".into()));
    }
    let b = draws.len() as f64;
    let mean_a = draws.iter().fold(DVector::zeros(k), |acc, d| acc + &d.0) / b;
    let mean_b = draws.iter().fold(DVector::zeros(k), |acc, d| acc + &d.1) / b;
    let mut joint = JointCovariance {
        free: DMatrix::zeros(k, k),
        model: DMatrix::zeros(k, k),
        cross: DMatrix::zeros(k, k),
    };
    for (a, m) in &draws {
        let da = a - &mean_a;
        let dm = m - &mean_b;
        joint.free += &da * da.transpose();
        joint.model += &dm * dm.transpose();
        joint.cross += &da * dm.transpose();
    }
    let scale = 1.0 / (b - 1.0);
    joint.free *= scale;
    joint.model *= scale;
    joint.cross *= scale;
    Ok((joint, draws.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn joint_with_v(v: f64) -> JointCovariance {
        JointCovariance::from_difference(DMatrix::from_element(1, 1, 0.01), DMatrix::from_element(1, 1, v))
    }

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn equal_estimates_give_unit_weight() {
        let e = shrink(&vec1(0.4), &vec1(0.4), &joint_with_v(0.02), true).unwrap();
        assert_eq!(e.weights[0], 1.0);
        assert!((e.beta[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn vanishing_variance_returns_free_estimate() {
        let e = shrink(&vec1(0.9), &vec1(0.1), &joint_with_v(1e-14), true).unwrap();
        assert!(e.weights[0] < 1e-12);
        assert!((e.beta[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn variance_equal_to_squared_difference_is_midpoint() {
        let e = shrink(&vec1(0.9), &vec1(0.1), &joint_with_v(0.64), true).unwrap();
        assert!((e.weights[0] - 0.5).abs() < 1e-12);
        assert!((e.beta[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let j = joint_with_v(0.1);
        let r = shrink(&DVector::zeros(2), &DVector::zeros(2), &j, true);
        assert!(matches!(r, Err(Error::ContractViolation(_))));
        let r = shrink(&vec1(0.0), &vec1(0.0), &j, false);
        assert!(matches!(r, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn influence_and_bootstrap_covariances_agree() {
        let t = CountsTable::new([250, 200, 50], [210, 220, 70]);
        let m = GeneticModel::Codominant;
        let free = fit_prospective_mle(&t, m).unwrap();
        let based = fit_retrospective_mle(&t, m).unwrap();
        let sw = JointCovariance::from_influence(&free, &based).unwrap();
        // the prospective sandwich of a saturated logistic model equals its inverse information
        assert!((&sw.free - &free.covariance).amax() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (bs, used) = bootstrap_joint_covariance(&t, m, 400, &mut rng).unwrap();
        assert!(used > 390);
        for j in 0..2 {
            let rel = (bs.free[(j, j)] - sw.free[(j, j)]).abs() / sw.free[(j, j)];
            assert!(rel < 0.25, "free var {j}: {rel}");
            let rel = (bs.model[(j, j)] - sw.model[(j, j)]).abs() / sw.model[(j, j)];
            assert!(rel < 0.25, "model var {j}: {rel}");
        }
    }

    #[test]
    fn eb_wald_runs_on_typical_table() {
        let t = CountsTable::new([250, 200, 50], [210, 220, 70]);
        let est = eb_wald_test(&t, GeneticModel::Codominant).unwrap();
        assert_eq!(est.test.df, 2);
        assert!(est.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        assert!(est.test.p_value > 0.0 && est.test.p_value < 1.0);
    }
}
