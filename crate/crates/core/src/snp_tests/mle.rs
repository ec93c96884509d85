use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::genotype::{estimate_allele_freq, hwe_genotype_probs, CountsTable, GeneticModel};
use crate::numeric::gen_inverse;
use crate::optim::{newton_maximize, Evaluation, NewtonOptions};

/// Influence of one cell of the 2 x 3 table on the log odds-ratio estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInfluence {
    pub d: u8,
    pub g: u8,
    pub count: f64,
    pub influence: DVector<f64>,
}

/// Maximum-likelihood fit of genotype log odds ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsRatioFit {
    pub model: GeneticModel,
    pub beta: DVector<f64>,
    /// Logistic intercept (prospective fits only).
    pub intercept: Option<f64>,
    /// Allele frequency in controls (retrospective fits only).
    pub f_hat: Option<f64>,
    /// Inverse observed information for `beta`.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub cells: Vec<CellInfluence>,
}

impl OddsRatioFit {
    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

fn coded(model: GeneticModel, g: usize) -> DVector<f64> {
    model.code_vec(g as u8)
}

fn check_groups(counts: &CountsTable) -> Result<()> {
    if counts.n_cases() == 0 || counts.n_controls() == 0 {
        return Err(Error::NotTestable("fit needs both cases and controls".into()));
    }
    Ok(())
}

/// Groups genotypes into the distinct levels of a binary coding.
fn binary_levels(model: GeneticModel) -> Option<[Vec<usize>; 2]> {
    match model {
        GeneticModel::Dominant => Some([vec![0], vec![1, 2]]),
        GeneticModel::Recessive => Some([vec![0, 1], vec![2]]),
        _ => None,
    }
}

fn check_design_rank(counts: &CountsTable, model: GeneticModel) -> Result<()> {
    let k = model.dim() + 1;
    let mut xtx = DMatrix::zeros(k, k);
    for g in 0..3 {
        if counts.marginal(g) == 0 {
            continue;
        }
        let mut x = DVector::zeros(k);
        x[0] = 1.0;
        x.rows_mut(1, k - 1).copy_from(&coded(model, g));
        xtx += &x * x.transpose();
    }
    let (_, rank) = gen_inverse(&xtx)?;
    if rank < k {
        return Err(Error::NotTestable(format!(
            "{model} coding is not identifiable on the observed genotypes"
        )));
    }
    Ok(())
}

fn prospective_separation(counts: &CountsTable, model: GeneticModel) -> Result<()> {
    let sep = |why: &str| Err(Error::Separation(format!("{model}: {why}")));
    match model {
        GeneticModel::Codominant => {
            for d in 0..2 {
                for g in 0..3 {
                    if counts.n[d][g] == 0 {
                        return sep(&format!("empty cell d={d} g={g}"));
                    }
                }
            }
        }
        GeneticModel::Dominant | GeneticModel::Recessive => {
            let levels = binary_levels(model).unwrap();
            for d in 0..2 {
                for lvl in &levels {
                    if lvl.iter().map(|&g| counts.n[d][g]).sum::<u64>() == 0 {
                        return sep("empty cell in the collapsed 2 x 2 table");
                    }
                }
            }
        }
        GeneticModel::Additive => {
            let range = |d: usize| {
                let present: Vec<usize> = (0..3).filter(|&g| counts.n[d][g] > 0).collect();
                (*present.first().unwrap(), *present.last().unwrap())
            };
            let (lo0, hi0) = range(0);
            let (lo1, hi1) = range(1);
            if hi0 <= lo1 || hi1 <= lo0 {
                return sep("genotypes separate cases from controls");
            }
        }
    }
    Ok(())
}

fn finish_fit(
    model: GeneticModel,
    out: crate::optim::NewtonOutcome,
    beta_offset: usize,
    cell_scores: Vec<(u8, u8, f64, DVector<f64>)>,
) -> Result<(OddsRatioFit, DMatrix<f64>)> {
    let k = model.dim();
    let info = -&out.hessian;
    let (inv, rank) = gen_inverse(&info)?;
    if rank < info.nrows() {
        return Err(Error::NotTestable("singular information matrix at the MLE".into()));
    }
    let beta = out.x.rows(beta_offset, k).into_owned();
    let covariance = inv.view((beta_offset, beta_offset), (k, k)).into_owned();
    let cells = cell_scores
        .into_iter()
        .map(|(d, g, count, s)| CellInfluence {
            d,
            g,
            count,
            influence: (&inv * s).rows(beta_offset, k).into_owned(),
        })
        .collect();
    let fit = OddsRatioFit {
        model,
        beta,
        intercept: None,
        f_hat: None,
        covariance,
        loglik: out.value,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.gradient.amax(),
        cells,
    };
    Ok((fit, inv))
}

/// Logistic regression of disease status on `m(G)` (prospective likelihood).
pub fn fit_prospective_mle(counts: &CountsTable, model: GeneticModel) -> Result<OddsRatioFit> {
    check_groups(counts)?;
    check_design_rank(counts, model)?;
    prospective_separation(counts, model)?;
    let k = model.dim();
    let xs: Vec<DVector<f64>> = (0..3)
        .map(|g| {
            let mut x = DVector::zeros(k + 1);
            x[0] = 1.0;
            x.rows_mut(1, k).copy_from(&coded(model, g));
            x
        })
        .collect();
    let eval = |theta: &DVector<f64>| -> Evaluation {
        let mut ll = 0.0;
        let mut grad = DVector::zeros(k + 1);
        let mut hess = DMatrix::zeros(k + 1, k + 1);
        for g in 0..3 {
            let n1 = counts.n[1][g] as f64;
            let n = counts.marginal(g) as f64;
            if n == 0.0 {
                continue;
            }
            let eta = theta.dot(&xs[g]);
            let log1pe = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ll += n1 * eta - n * log1pe;
            let p = 1.0 / (1.0 + (-eta).exp());
            grad += &xs[g] * (n1 - n * p);
            hess -= (&xs[g] * xs[g].transpose()) * (n * p * (1.0 - p));
        }
        Some((ll, grad, hess))
    };
    let n1 = counts.n_cases() as f64;
    let n0 = counts.n_controls() as f64;
    let mut x0 = DVector::zeros(k + 1);
    x0[0] = (n1 / n0).ln();
    let out = newton_maximize(eval, x0, NewtonOptions::default())
        .ok_or_else(|| Error::Domain("invalid starting point".into()))?;
    if !out.converged {
        return Err(Error::Convergence {
            iterations: out.iterations,
            gradient_norm: out.gradient.amax(),
        });
    }
    let theta = out.x.clone();
    let mut scores = Vec::new();
    for d in 0..2u8 {
        for g in 0..3usize {
            let c = counts.n[d as usize][g] as f64;
            if c == 0.0 {
                continue;
            }
            let p = 1.0 / (1.0 + (-theta.dot(&xs[g])).exp());
            scores.push((d, g as u8, c, &xs[g] * (f64::from(d) - p)));
        }
    }
    let (mut fit, _) = finish_fit(model, out, 1, scores)?;
    fit.intercept = Some(theta[0]);
    Ok(fit)
}

struct RetroPieces {
    p0: [f64; 3],
    p1: [f64; 3],
    s: [f64; 3],
    ds: [f64; 3],
}

fn retro_pieces(model: GeneticModel, beta: &DVector<f64>, f: f64) -> Option<RetroPieces> {
    if !(f > 0.0 && f < 1.0) || beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    let p0 = hwe_genotype_probs(f).ok()?;
    let mut psi = [0.0; 3];
    for g in 0..3 {
        psi[g] = beta.dot(&coded(model, g)).exp();
    }
    let norm: f64 = (0..3).map(|g| psi[g] * p0[g]).sum();
    if !norm.is_finite() || norm <= 0.0 {
        return None;
    }
    let v = f * (1.0 - f);
    let mut p1 = [0.0; 3];
    let mut s = [0.0; 3];
    let mut ds = [0.0; 3];
    for g in 0..3 {
        p1[g] = psi[g] * p0[g] / norm;
        let gg = g as f64;
        s[g] = (gg - 2.0 * f) / v;
        ds[g] = (-2.0 * v - (gg - 2.0 * f) * (1.0 - 2.0 * f)) / (v * v);
    }
    Some(RetroPieces { p0, p1, s, ds })
}

fn retro_eval(counts: &CountsTable, model: GeneticModel, theta: &DVector<f64>) -> Evaluation {
    let k = model.dim();
    let beta = theta.rows(0, k).into_owned();
    let f = theta[k];
    let pc = retro_pieces(model, &beta, f)?;
    let n1 = counts.n_cases() as f64;
    let mut ll = 0.0;
    for g in 0..3 {
        let c0 = counts.n[0][g] as f64;
        let c1 = counts.n[1][g] as f64;
        if c0 > 0.0 {
            ll += c0 * pc.p0[g].ln();
        }
        if c1 > 0.0 {
            ll += c1 * pc.p1[g].ln();
        }
    }
    if !ll.is_finite() {
        return None;
    }
    let ms: Vec<DVector<f64>> = (0..3).map(|g| coded(model, g)).collect();
    let e_m: DVector<f64> = (0..3).fold(DVector::zeros(k), |acc, g| acc + &ms[g] * pc.p1[g]);
    let e_s: f64 = (0..3).map(|g| pc.p1[g] * pc.s[g]).sum();
    let e_ds: f64 = (0..3).map(|g| pc.p1[g] * pc.ds[g]).sum();
    let mut cov_mm = DMatrix::zeros(k, k);
    let mut cov_ms = DVector::zeros(k);
    let mut var_s = 0.0;
    for g in 0..3 {
        let dm = &ms[g] - &e_m;
        let dsg = pc.s[g] - e_s;
        cov_mm += (&dm * dm.transpose()) * pc.p1[g];
        cov_ms += &dm * (dsg * pc.p1[g]);
        var_s += pc.p1[g] * dsg * dsg;
    }
    let mut grad = DVector::zeros(k + 1);
    let mut hess = DMatrix::zeros(k + 1, k + 1);
    let mut gb = -&e_m * n1;
    let mut gf = -n1 * e_s;
    let mut hff = -n1 * (var_s + e_ds);
    for g in 0..3 {
        let c1 = counts.n[1][g] as f64;
        let c = counts.marginal(g) as f64;
        gb += &ms[g] * c1;
        gf += c * pc.s[g];
        hff += c * pc.ds[g];
    }
    grad.rows_mut(0, k).copy_from(&gb);
    grad[k] = gf;
    hess.view_mut((0, 0), (k, k)).copy_from(&(-cov_mm * n1));
    let hbf = -cov_ms * n1;
    hess.view_mut((0, k), (k, 1)).copy_from(&hbf);
    hess.view_mut((k, 0), (1, k)).copy_from(&hbf.transpose());
    hess[(k, k)] = hff;
    Some((ll, grad, hess))
}

/// Retrospective log-likelihood `log L₁L₀` with HWE controls and its analytic
/// gradient with respect to `(β, f)`.
pub fn retrospective_loglik(
    counts: &CountsTable,
    model: GeneticModel,
    beta: &DVector<f64>,
    f: f64,
) -> Result<(f64, DVector<f64>)> {
    if beta.len() != model.dim() {
        return Err(Error::ContractViolation(
            "beta dimension does not match the coding".into(),
        ));
    }
    let mut theta = DVector::zeros(beta.len() + 1);
    theta.rows_mut(0, beta.len()).copy_from(beta);
    theta[beta.len()] = f;
    let (ll, g, _) = retro_eval(counts, model, &theta).ok_or(Error::DegenerateFrequency(f))?;
    Ok((ll, g))
}

fn retrospective_separation(counts: &CountsTable, model: GeneticModel) -> Result<()> {
    let sep = |why: &str| Err(Error::Separation(format!("{model}: {why}")));
    match model {
        GeneticModel::Codominant => {
            if (0..3).any(|g| counts.n[1][g] == 0) {
                return sep("a genotype class has no cases");
            }
        }
        GeneticModel::Dominant | GeneticModel::Recessive => {
            for lvl in binary_levels(model).unwrap() {
                if lvl.iter().map(|&g| counts.n[1][g]).sum::<u64>() == 0 {
                    return sep("a coded level has no cases");
                }
            }
        }
        GeneticModel::Additive => {
            let c = counts.cases();
            if c[1] + c[2] == 0 || c[0] + c[1] == 0 {
                return sep("all cases carry an extreme genotype");
            }
        }
    }
    Ok(())
}

/// Maximizes the retrospective likelihood with HWE-constrained control
/// genotype frequencies over `(β, f)`.
pub fn fit_retrospective_mle(counts: &CountsTable, model: GeneticModel) -> Result<OddsRatioFit> {
    check_groups(counts)?;
    let f0 = estimate_allele_freq(counts)?;
    if f0 <= 0.0 || f0 >= 1.0 {
        return Err(Error::DegenerateFrequency(f0));
    }
    retrospective_separation(counts, model)?;
    let k = model.dim();
    let mut x0 = DVector::zeros(k + 1);
    x0[k] = f0;
    let out = newton_maximize(|t| retro_eval(counts, model, t), x0, NewtonOptions::default())
        .ok_or(Error::DegenerateFrequency(f0))?;
    if !out.converged {
        return Err(Error::Convergence {
            iterations: out.iterations,
            gradient_norm: out.gradient.amax(),
        });
    }
    let f = out.x[k];
    if f <= 1e-10 || f >= 1.0 - 1e-10 {
        return Err(Error::DegenerateFrequency(f));
    }
    let beta = out.x.rows(0, k).into_owned();
    let pc = retro_pieces(model, &beta, f).ok_or(Error::DegenerateFrequency(f))?;
    let e_m: DVector<f64> = (0..3).fold(DVector::zeros(k), |acc, g| acc + coded(model, g) * pc.p1[g]);
    let e_s: f64 = (0..3).map(|g| pc.p1[g] * pc.s[g]).sum();
    let mut scores = Vec::new();
    for d in 0..2u8 {
        for g in 0..3usize {
            let c = counts.n[d as usize][g] as f64;
            if c == 0.0 {
                continue;
            }
            let mut s = DVector::zeros(k + 1);
            if d == 1 {
                s.rows_mut(0, k).copy_from(&(coded(model, g) - &e_m));
                s[k] = pc.s[g] - e_s;
            } else {
                s[k] = pc.s[g];
            }
            scores.push((d, g as u8, c, s));
        }
    }
    let (mut fit, _) = finish_fit(model, out, 0, scores)?;
    fit.f_hat = Some(f);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codominant_matches_closed_form_odds_ratios() {
        let t = CountsTable::new([200, 150, 40], [160, 170, 70]);
        let fit = fit_prospective_mle(&t, GeneticModel::Codominant).unwrap();
        let (b0, b1, b2) = (200.0_f64, 150.0_f64, 40.0_f64);
        let (a0, a1, a2) = (160.0_f64, 170.0_f64, 70.0_f64);
        assert!((fit.beta[0] - (a1 * b0 / (a0 * b1)).ln()).abs() < 1e-8);
        assert!((fit.beta[1] - (a2 * b0 / (a0 * b2)).ln()).abs() < 1e-8);
        assert!(fit.converged);
        // Woolf variance for the heterozygote log odds ratio
        let woolf = 1.0 / a1 + 1.0 / a0 + 1.0 / b1 + 1.0 / b0;
        assert!((fit.covariance[(0, 0)] - woolf).abs() < 1e-8);
    }

    #[test]
    fn identical_columns_give_zero_beta() {
        let t = CountsTable::new([50, 40, 10], [50, 40, 10]);
        for m in GeneticModel::ALL {
            let fit = fit_prospective_mle(&t, m).unwrap();
            assert!(fit.beta.amax() < 1e-10, "{m}");
        }
    }

    #[test]
    fn separation_is_reported() {
        let t = CountsTable::new([50, 40, 0], [50, 40, 10]);
        assert!(matches!(
            fit_prospective_mle(&t, GeneticModel::Codominant),
            Err(Error::Separation(_))
        ));
        assert!(matches!(
            fit_prospective_mle(&t, GeneticModel::Recessive),
            Err(Error::Separation(_))
        ));
        let t = CountsTable::new([50, 0, 0], [0, 10, 10]);
        assert!(matches!(
            fit_prospective_mle(&t, GeneticModel::Additive),
            Err(Error::Separation(_))
        ));
    }

    #[test]
    fn retrospective_rejects_monomorphic_input() {
        let t = CountsTable::new([50, 0, 0], [40, 0, 0]);
        assert!(matches!(
            fit_retrospective_mle(&t, GeneticModel::Additive),
            Err(Error::DegenerateFrequency(_))
        ));
    }

    #[test]
    fn retrospective_gradient_matches_finite_differences() {
        let t = CountsTable::new([200, 150, 40], [160, 170, 70]);
        for m in GeneticModel::ALL {
            let beta = DVector::from_fn(m.dim(), |i, _| 0.2 - 0.35 * i as f64);
            let f = 0.31;
            let (_, g) = retrospective_loglik(&t, m, &beta, f).unwrap();
            let h = 1e-6;
            for j in 0..=m.dim() {
                let shift = |s: f64| {
                    let mut b = beta.clone();
                    let mut ff = f;
                    if j < m.dim() {
                        b[j] += s;
                    } else {
                        ff += s;
                    }
                    retrospective_loglik(&t, m, &b, ff).unwrap().0
                };
                let fd = (shift(h) - shift(-h)) / (2.0 * h);
                assert!(((fd - g[j]) / g[j].abs().max(1.0)).abs() < 1e-5, "{m} j={j}");
            }
        }
    }

    #[test]
    fn retrospective_fit_converges() {
        let t = CountsTable::new([250, 210, 40], [200, 220, 80]);
        let fit = fit_retrospective_mle(&t, GeneticModel::Recessive).unwrap();
        assert!(fit.converged && fit.gradient_norm < 1e-8);
        assert!(fit.beta[0] > 0.0);
        let f = fit.f_hat.unwrap();
        assert!(f > 0.0 && f < 1.0);
    }
}
