//! Single-SNP association tests for typed genotypes: prospective,
//! retrospective (HWE-constrained) and empirical-Bayes score tests, plus the
//! maximum-likelihood fits and shrinkage estimator behind the Wald variants.

pub(crate) mod eb;
mod mle;
pub(crate) mod score;

pub use eb::{bootstrap_joint_covariance, eb_shrink_estimates, eb_wald_test, wald_test, EbEstimate, JointCovariance};
pub use mle::{fit_prospective_mle, fit_retrospective_mle, retrospective_loglik, CellInfluence, OddsRatioFit};
pub use score::{EbDiagnostics, RetroVariance};

use crate::error::{Error, Result};
use crate::genotype::{CountsTable, GeneticModel};
use crate::result::{Method, TestResult};
use score::{eb_parts, prospective_parts, retrospective_parts, rows_from_counts, Moments, ScoreParts};

/// Runs one typed-SNP method on a 2 x 3 table.
pub fn run_snp_test(method: Method, counts: &CountsTable, model: GeneticModel) -> Result<TestResult> {
    match method {
        Method::Prospective => prospective_score_test(counts, model),
        Method::Retrospective => retrospective_score_test(counts, model),
        Method::EmpiricalBayes => eb_score_test(counts, model).map(|r| r.0),
        Method::ProspectiveWald => wald_test(&fit_prospective_mle(counts, model)?, method),
        Method::RetrospectiveWald => wald_test(&fit_retrospective_mle(counts, model)?, method),
        Method::EbWald => eb_wald_test(counts, model).map(|e| e.test),
        other => Err(Error::ContractViolation(format!("{other} is not a typed-SNP method"))),
    }
}

fn finish(method: Method, parts: &ScoreParts, f_hat: f64) -> Result<TestResult> {
    let (stat, df) = parts.statistic()?;
    let mut r = TestResult::new(method, stat, df)?.with("f_hat", f_hat);
    r.psd_projected = parts.psd_projected;
    Ok(r)
}

/// Prospective score test; for additive coding this is the Cochran-Armitage trend test.
pub fn prospective_score_test(counts: &CountsTable, model: GeneticModel) -> Result<TestResult> {
    let rows = rows_from_counts(counts, model);
    let mo = Moments::new(&rows, model.dim())?;
    finish(Method::Prospective, &prospective_parts(&mo), mo.f_hat)
}

/// Retrospective score test under HWE with the pooled-moment variance.
pub fn retrospective_score_test(counts: &CountsTable, model: GeneticModel) -> Result<TestResult> {
    retrospective_score_test_with(counts, model, RetroVariance::Pooled)
}

pub fn retrospective_score_test_with(
    counts: &CountsTable,
    model: GeneticModel,
    variance: RetroVariance,
) -> Result<TestResult> {
    let rows = rows_from_counts(counts, model);
    let mo = Moments::new(&rows, model.dim())?;
    let parts = retrospective_parts(&rows, &mo, model, variance)?;
    finish(Method::Retrospective, &parts, mo.f_hat)
}

/// Empirical-Bayes score test: the HWE-expected mean of `m(G)` is shrunk
/// toward the pooled empirical mean according to the estimated HWE bias.
pub fn eb_score_test(counts: &CountsTable, model: GeneticModel) -> Result<(TestResult, EbDiagnostics)> {
    let rows = rows_from_counts(counts, model);
    let mo = Moments::new(&rows, model.dim())?;
    let (parts, diag) = eb_parts(&rows, &mo, model)?;
    let mut r = finish(Method::EmpiricalBayes, &parts, mo.f_hat)?;
    for k in 0..diag.weights.len() {
        let sfx = if diag.weights.len() > 1 {
            format!("_{}", k + 1)
        } else {
            String::new()
        };
        r = r
            .with(&format!("tau_hat{sfx}"), diag.tau_hat[k])
            .with(&format!("eb_weight{sfx}"), diag.weights[k]);
    }
    Ok((r, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::genotype::GeneticModel::*;

    #[test]
    fn identical_groups_give_zero_score() {
        let t = CountsTable::new([10, 20, 10], [10, 20, 10]);
        for m in GeneticModel::ALL {
            let r = prospective_score_test(&t, m).unwrap();
            assert!(r.statistic.abs() < 1e-20);
            assert_eq!(r.p_value, 1.0);
        }
    }

    #[test]
    fn prospective_hand_computed_score() {
        // cases (10,20,10) mean 1.0, controls (20,20,0) mean 0.5, N1 = N0 = 40
        let t = CountsTable::new([20, 20, 0], [10, 20, 10]);
        let rows = rows_from_counts(&t, Additive);
        let mo = Moments::new(&rows, 1).unwrap();
        let parts = prospective_parts(&mo);
        assert!((parts.u[0] - 10.0).abs() < 1e-12);
        // pooled (30, 40, 10): mean 0.75, E[G^2] = (40 + 40)/80 = 1.0, var = 0.4375
        assert!((parts.v[(0, 0)] - 20.0 * 0.4375).abs() < 1e-12);
        let r = prospective_score_test(&t, Additive).unwrap();
        assert!((r.statistic - 100.0 / 8.75).abs() < 1e-10);
        assert_eq!(r.df, 1);
    }

    #[test]
    fn additive_identity_between_prospective_and_retrospective() {
        let tables = [
            CountsTable::new([20, 20, 0], [10, 20, 10]),
            CountsTable::new([100, 30, 70], [5, 50, 1]),
            CountsTable::new([1, 0, 0], [0, 0, 3]),
        ];
        for t in tables {
            let p = prospective_score_test(&t, Additive).unwrap();
            let r = retrospective_score_test(&t, Additive).unwrap();
            assert!((p.statistic - r.statistic).abs() <= 1e-10 * p.statistic.max(1.0));
        }
    }

    #[test]
    fn cases_at_hwe_expectation_give_zero_retrospective_score() {
        // pooled f = 0.5, cases exactly (0.25, 0.5, 0.25) * 40
        let t = CountsTable::new([10, 20, 10], [10, 20, 10]);
        for m in GeneticModel::ALL {
            let rows = rows_from_counts(&t, m);
            let mo = Moments::new(&rows, m.dim()).unwrap();
            let parts = retrospective_parts(&rows, &mo, m, RetroVariance::Pooled).unwrap();
            assert!(parts.u.amax() < 1e-12, "{m}");
        }
    }

    #[test]
    fn monomorphic_locus_is_not_testable() {
        let t = CountsTable::new([50, 0, 0], [40, 0, 0]);
        assert!(matches!(
            prospective_score_test(&t, Additive),
            Err(Error::NotTestable(_))
        ));
        assert!(matches!(
            retrospective_score_test(&t, Recessive),
            Err(Error::DegenerateFrequency(_))
        ));
        assert!(matches!(
            eb_score_test(&t, Recessive),
            Err(Error::DegenerateFrequency(_))
        ));
    }

    #[test]
    fn eb_at_exact_hwe_matches_retrospective() {
        // pooled sample (25, 50, 25) is exactly HWE at f = 0.5 so tau = 0
        let t = CountsTable::new([15, 25, 10], [10, 25, 15]);
        for m in [Recessive, Dominant, Codominant] {
            let (eb, diag) = eb_score_test(&t, m).unwrap();
            assert!(diag.tau_hat.amax() < 1e-15);
            assert!(diag.weights.iter().all(|&w| (w - 1.0).abs() < 1e-15));
            let r = retrospective_score_test(&t, m).unwrap();
            assert!((eb.statistic - r.statistic).abs() < 1e-10 * r.statistic.max(1.0), "{m}");
        }
    }

    #[test]
    fn eb_under_gross_hwe_violation_matches_prospective() {
        // no heterozygotes at all: tau^2 dwarfs s^2/N
        let t = CountsTable::new([9000, 0, 1000], [8000, 0, 2000]);
        let (eb, diag) = eb_score_test(&t, Recessive).unwrap();
        assert!(diag.weights[0] < 1e-3);
        let p = prospective_score_test(&t, Recessive).unwrap();
        assert!((eb.statistic - p.statistic).abs() / p.statistic < 1e-2);
    }

    #[test]
    fn eb_weights_in_unit_interval() {
        let t = CountsTable::new([300, 150, 50], [250, 180, 70]);
        let (_, d) = eb_score_test(&t, Codominant).unwrap();
        assert!(d.weights.iter().all(|&w| (0.0..=1.0).contains(&w)));
        for k in 0..2 {
            let w = d.s2_over_n[k] / (d.s2_over_n[k] + d.tau_hat[k].powi(2));
            assert!((w - d.weights[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn codominant_has_two_degrees_of_freedom() {
        let t = CountsTable::new([300, 150, 50], [250, 180, 70]);
        assert_eq!(prospective_score_test(&t, Codominant).unwrap().df, 2);
        assert_eq!(retrospective_score_test(&t, Codominant).unwrap().df, 2);
    }

    #[test]
    fn hwe_model_variance_flags_indefinite_estimates() {
        // heavy heterozygote excess: V_m is small relative to the HWE correction
        let t = CountsTable::new([0, 50, 0], [0, 49, 1]);
        let r = retrospective_score_test_with(&t, Additive, RetroVariance::HweModel);
        match r {
            Ok(r) => assert!(r.psd_projected),
            Err(e) => assert!(matches!(e, Error::NotTestable(_))),
        }
    }
}
