use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::likelihood::HaplotypeLikelihood;
use super::{Group, GroupKey, HaplotypeData, RiskModelSpec};
use crate::error::{Error, Result};
use crate::numeric::{chisq_pvalue, quadratic_statistic};
use crate::optim::{newton_maximize, NewtonOptions};
use crate::snp_tests::eb::shrink;
use crate::snp_tests::JointCovariance;

/// Haplotypes whose estimated frequency falls below this are removed.
const FREEZE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    Free,
    Model,
    EmpiricalBayes,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::Free => "free",
            FitMethod::Model => "model",
            FitMethod::EmpiricalBayes => "eb",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaplotypeFit {
    pub method: FitMethod,
    pub spec: RiskModelSpec,
    pub beta: DVector<f64>,
    /// Covariance of `beta`.
    pub covariance: DMatrix<f64>,
    /// Frequencies over `haplotypes`.
    pub theta: Vec<f64>,
    pub haplotypes: Vec<Vec<u8>>,
    pub kappa: f64,
    /// Maximized log-likelihood; `NaN` for the empirical-Bayes combination.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some retained haplotype frequency is below `1e-6`.
    pub boundary: bool,
    /// Weight on the model-based estimate (empirical-Bayes fits only).
    pub weights: Option<DVector<f64>>,
    pub(crate) influence: Vec<(GroupKey, f64, DVector<f64>)>,
}

impl HaplotypeFit {
    pub fn standard_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    /// Wald test of `β = 0`: statistic, df, p-value.
    pub fn wald(&self) -> Result<(f64, usize, f64)> {
        let (stat, df) = quadratic_statistic(&self.beta, &self.covariance)?;
        Ok((stat, df, chisq_pvalue(stat, df)?))
    }
}

fn fd_jacobian<F>(f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[j] += h;
        dn[j] -= h;
        cols.push((f(&up) - f(&dn)) / (2.0 * h));
    }
    DMatrix::from_columns(&cols)
}

/// Newton ascent over `x[start..start+len]`, other coordinates fixed.
fn maximize_block<F>(f: F, x0: &DVector<f64>, start: usize, len: usize) -> Result<(DVector<f64>, f64, usize)>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let embed = |y: &DVector<f64>| {
        let mut x = x0.clone();
        x.rows_mut(start, len).copy_from(y);
        x
    };
    let eval = |y: &DVector<f64>| {
        let (v, g) = f(&embed(y));
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let h = fd_jacobian(|z| f(&embed(z)).1.rows(start, len).into_owned(), y);
        let h = (&h + h.transpose()) * 0.5;
        Some((v, g.rows(start, len).into_owned(), h))
    };
    let out = newton_maximize(eval, x0.rows(start, len).into_owned(), NewtonOptions::default())
        .ok_or_else(|| Error::Domain("starting values outside the likelihood support".into()))?;
    if !out.converged {
        return Err(Error::Convergence {
            iterations: out.iterations,
            gradient_norm: out.gradient.amax(),
        });
    }
    Ok((embed(&out.x), out.value, out.iterations))
}

/// EM estimate of haplotype frequencies under HWE from the subjects in
/// `stratum` (all subjects when `None`). Starts from uniform frequencies.
pub fn em_haplotype_frequencies(data: &HaplotypeData, stratum: Option<u8>) -> Vec<f64> {
    let k = data.haplotypes().len();
    let groups: Vec<&Group> = data
        .groups
        .iter()
        .filter(|g| stratum.is_none_or(|d| g.d() == d))
        .collect();
    let n: f64 = groups.iter().map(|g| g.w).sum();
    let mut theta = vec![1.0 / k as f64; k];
    for _ in 0..20_000 {
        let mut next = vec![0.0; k];
        for g in &groups {
            let total: f64 = g.diplos.iter().map(|&h| super::diplotype_prior(h, &theta)).sum();
            if total <= 0.0 {
                continue;
            }
            for &h in &g.diplos {
                let p = g.w * super::diplotype_prior(h, &theta) / total;
                next[h.a] += p;
                next[h.b] += p;
            }
        }
        for v in &mut next {
            *v /= 2.0 * n;
        }
        let change = next.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = next;
        if change < 1e-13 {
            break;
        }
    }
    theta
}

fn support(theta: &[f64]) -> Vec<usize> {
    (0..theta.len()).filter(|&k| theta[k] >= FREEZE).collect()
}

fn renormalized(theta: &[f64], keep: &[usize]) -> Vec<f64> {
    let total: f64 = keep.iter().map(|&k| theta[k]).sum();
    keep.iter().map(|&k| theta[k] / total).collect()
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best })
}

/// Control-only HWE frequency estimate (EM, then Newton on the score
/// equations) restricted to haplotypes it supports.
fn control_fit(data: &HaplotypeData, spec: &RiskModelSpec) -> Result<(HaplotypeData, Vec<f64>)> {
    let em = em_haplotype_frequencies(data, Some(0));
    let keep = support(&em);
    let restricted = data.restrict(&keep)?;
    let theta = renormalized(&em, &keep);
    if keep.len() < 2 {
        return Ok((restricted, theta));
    }
    let reference = argmax(&theta);
    let probe = RiskModelSpec {
        target: restricted.haplotypes()[0].clone(),
        ..spec.clone()
    };
    let lik = HaplotypeLikelihood::new(&restricted, &probe, reference)?;
    let x0 = lik.pack(&vec![0.0; lik.n_beta()], 0.0, &theta)?;
    let p1 = lik.n_beta() + 1;
    let (x, _, _) = maximize_block(|x| lik.controls(x), &x0, p1, lik.dim() - p1)?;
    let theta = lik.theta(&x);
    Ok((restricted, theta))
}

/// Control-only HWE haplotype-frequency estimate over the data's universe;
/// unsupported haplotypes get frequency zero.
pub fn control_haplotype_frequencies(data: &HaplotypeData) -> Result<Vec<f64>> {
    let spec = RiskModelSpec::new(data.haplotypes()[0].clone(), super::HaplotypeMode::Additive);
    let (restricted, theta) = control_fit(data, &spec)?;
    let mut out = vec![0.0; data.haplotypes().len()];
    for (h, t) in restricted.haplotypes().iter().zip(theta) {
        out[data
            .haplotypes()
            .iter()
            .position(|x| x == h)
            .expect("restricted universe is a subset")] = t;
    }
    Ok(out)
}

fn invert(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = a.singular_values();
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= 1e-10 * max {
        return Err(Error::NotIdentifiable("information matrix is singular".into()));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::NotIdentifiable("information matrix is singular".into()))
}

/// `A⁻¹ B A⁻ᵀ` with `B` built from scores centred within case and control strata.
fn sandwich(
    groups: &[Group],
    scores: &[DVector<f64>],
    ainv: &DMatrix<f64>,
    p: usize,
) -> (DMatrix<f64>, Vec<(GroupKey, f64, DVector<f64>)>) {
    let infl: Vec<DVector<f64>> = scores.iter().map(|s| ainv * s).collect();
    let n = ainv.nrows();
    let mut cov = DMatrix::zeros(n, n);
    for d in 0..2u8 {
        let members: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].d() == d).collect();
        let w: f64 = members.iter().map(|&i| groups[i].w).sum();
        if w == 0.0 {
            continue;
        }
        let mean = members
            .iter()
            .fold(DVector::zeros(n), |acc, &i| acc + &infl[i] * groups[i].w)
            / w;
        for &i in &members {
            let c = &infl[i] - &mean;
            cov += (&c * c.transpose()) * groups[i].w;
        }
    }
    let kept = groups
        .iter()
        .zip(&infl)
        .map(|(g, f)| (g.key.clone(), g.w, f.rows(0, p).into_owned()))
        .collect();
    (cov, kept)
}

fn build_fit(
    method: FitMethod,
    spec: &RiskModelSpec,
    lik: &HaplotypeLikelihood<'_>,
    data: &HaplotypeData,
    x: &DVector<f64>,
    loglik: f64,
    iterations: usize,
    cov: DMatrix<f64>,
    influence: Vec<(GroupKey, f64, DVector<f64>)>,
) -> HaplotypeFit {
    let p = lik.n_beta();
    let theta = lik.theta(x);
    HaplotypeFit {
        method,
        spec: spec.clone(),
        beta: x.rows(0, p).into_owned(),
        covariance: cov.view((0, 0), (p, p)).into_owned(),
        boundary: theta.iter().any(|&t| t < 1e-6),
        theta,
        haplotypes: data.haplotypes().to_vec(),
        kappa: lik.kappa(x),
        loglik,
        converged: true,
        iterations,
        weights: None,
        influence,
    }
}

fn check_universe(data: &HaplotypeData, spec: &RiskModelSpec) -> Result<()> {
    if data.haplotypes().len() < 2 {
        return Err(Error::NotIdentifiable("only one haplotype is present".into()));
    }
    if data.target_index(&spec.target).is_none() {
        return Err(Error::NotIdentifiable(format!(
            "target haplotype {:?} has no support",
            spec.target
        )));
    }
    Ok(())
}

/// Maximizes `Σ log L_model` over `(β, θ, κ)`; sandwich covariance.
pub fn fit_model(data: &HaplotypeData, spec: &RiskModelSpec) -> Result<HaplotypeFit> {
    let em = em_haplotype_frequencies(data, None);
    let keep = support(&em);
    let data = data.restrict(&keep)?;
    check_universe(&data, spec)?;
    let theta0 = renormalized(&em, &keep);
    let lik = HaplotypeLikelihood::new(&data, spec, argmax(&theta0))?;
    let kappa0 = (data.n_cases() / data.n_controls()).ln();
    let x0 = lik.pack(&vec![0.0; lik.n_beta()], kappa0, &theta0)?;
    let (x, value, iterations) = maximize_block(|x| lik.model(x), &x0, 0, lik.dim())?;
    let hess = fd_jacobian(|z| lik.model(z).1, &x);
    let a = -(&hess + hess.transpose()) * 0.5;
    let ainv = invert(&a)?;
    let scores: Vec<DVector<f64>> = lik.model_contributions(&x).into_iter().map(|(_, s)| s).collect();
    let (cov, infl) = sandwich(&data.groups, &scores, &ainv, lik.n_beta());
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(build_fit(
        FitMethod::Model,
        spec,
        &lik,
        &data,
        &x,
        value,
        iterations,
        cov,
        infl,
    ))
}

/// Solves the `L_free` score for `(β, κ)` stacked with the control-only HWE
/// estimating equation for `θ`; sandwich covariance over the stacked system.
///
/// The system is block-triangular (the `θ` equation does not involve `β` or
/// `κ`), so `θ` is solved first and `(β, κ)` second.
pub fn fit_free(data: &HaplotypeData, spec: &RiskModelSpec) -> Result<HaplotypeFit> {
    let (data, theta) = control_fit(data, spec)?;
    check_universe(&data, spec)?;
    let lik = HaplotypeLikelihood::new(&data, spec, argmax(&theta))?;
    let kappa0 = (data.n_cases() / data.n_controls()).ln();
    let x0 = lik.pack(&vec![0.0; lik.n_beta()], kappa0, &theta)?;
    let (x, value, iterations) = maximize_block(|x| lik.free(x), &x0, 0, lik.n_beta() + 1)?;
    let a = -fd_jacobian(|z| lik.stacked(z), &x);
    let ainv = invert(&a)?;
    let scores = lik.stacked_contributions(&x);
    let (infl_cov, infl) = sandwich(&data.groups, &scores, &ainv, lik.n_beta());
    let cov = (&infl_cov + infl_cov.transpose()) * 0.5;
    Ok(build_fit(
        FitMethod::Free,
        spec,
        &lik,
        &data,
        &x,
        value,
        iterations,
        cov,
        infl,
    ))
}

/// Joint covariance of the free and model `β` estimates from per-subject
/// influence functions, centred within the case and control strata.
pub fn haplotype_joint_covariance(free: &HaplotypeFit, model: &HaplotypeFit) -> Result<JointCovariance> {
    check_pair(free, model)?;
    let p = free.beta.len();
    let mut merged: BTreeMap<&GroupKey, (f64, DVector<f64>, DVector<f64>)> = BTreeMap::new();
    for (key, w, f) in &free.influence {
        merged
            .entry(key)
            .or_insert_with(|| (*w, DVector::zeros(p), DVector::zeros(p)))
            .1 = f.clone();
    }
    for (key, w, f) in &model.influence {
        merged
            .entry(key)
            .or_insert_with(|| (*w, DVector::zeros(p), DVector::zeros(p)))
            .2 = f.clone();
    }
    let mut out = JointCovariance {
        free: DMatrix::zeros(p, p),
        model: DMatrix::zeros(p, p),
        cross: DMatrix::zeros(p, p),
    };
    for d in 0..2u8 {
        let members: Vec<_> = merged.iter().filter(|(k, _)| k.d == d).map(|(_, v)| v).collect();
        let w: f64 = members.iter().map(|m| m.0).sum();
        if w == 0.0 {
            continue;
        }
        let mf = members.iter().fold(DVector::zeros(p), |acc, m| acc + &m.1 * m.0) / w;
        let mm = members.iter().fold(DVector::zeros(p), |acc, m| acc + &m.2 * m.0) / w;
        for (wi, a, b) in members {
            let da = a - &mf;
            let db = b - &mm;
            out.free += (&da * da.transpose()) * *wi;
            out.model += (&db * db.transpose()) * *wi;
            out.cross += (&da * db.transpose()) * *wi;
        }
    }
    Ok(out)
}

fn check_pair(free: &HaplotypeFit, model: &HaplotypeFit) -> Result<()> {
    if free.method != FitMethod::Free || model.method != FitMethod::Model {
        return Err(Error::ContractViolation(
            "expected a model-free and a model-based fit".into(),
        ));
    }
    if free.spec != model.spec || free.beta.len() != model.beta.len() {
        return Err(Error::ContractViolation("fits use different risk models".into()));
    }
    Ok(())
}

/// Componentwise empirical-Bayes shrinkage of the free estimate toward the
/// model-based one, `W = v/(v + (β_free − β_model)²)` with `v` the diagonal of
/// the covariance of the difference. The covariance follows the delta method
/// on the joint law of both estimates.
pub fn eb_combine(free: &HaplotypeFit, model: &HaplotypeFit, joint: &JointCovariance) -> Result<HaplotypeFit> {
    check_pair(free, model)?;
    let est = shrink(&free.beta, &model.beta, joint, free.converged && model.converged)?;
    Ok(HaplotypeFit {
        method: FitMethod::EmpiricalBayes,
        spec: model.spec.clone(),
        beta: est.beta,
        covariance: est.covariance,
        theta: model.theta.clone(),
        haplotypes: model.haplotypes.clone(),
        kappa: model.kappa,
        loglik: f64::NAN,
        converged: true,
        iterations: 0,
        boundary: model.boundary || free.boundary,
        weights: Some(est.weights),
        influence: Vec::new(),
    })
}

/// Nonparametric bootstrap of the joint covariance, resampling cases and
/// controls separately. Returns the estimate and the number of resamples in
/// which both fits succeeded.
pub fn bootstrap_haplotype_joint<R: Rng + ?Sized>(
    data: &HaplotypeData,
    spec: &RiskModelSpec,
    resamples: usize,
    rng: &mut R,
) -> Result<(JointCovariance, usize)> {
    let p = spec.n_beta();
    let mut draws: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    for _ in 0..resamples {
        let boot = resample(data, rng);
        if let (Ok(f), Ok(m)) = (fit_free(&boot, spec), fit_model(&boot, spec)) {
            draws.push((f.beta, m.beta));
        }
    }
    if draws.len() < 2 {
        return Err(Error::NotIdentifiable("too few successful bootstrap fits".into()));
    }
    let b = draws.len() as f64;
    let mf = draws.iter().fold(DVector::zeros(p), |acc, d| acc + &d.0) / b;
    let mm = draws.iter().fold(DVector::zeros(p), |acc, d| acc + &d.1) / b;
    let mut out = JointCovariance {
        free: DMatrix::zeros(p, p),
        model: DMatrix::zeros(p, p),
        cross: DMatrix::zeros(p, p),
    };
    for (f, m) in &draws {
        let a = f - &mf;
        let c = m - &mm;
        out.free += &a * a.transpose();
        out.model += &c * c.transpose();
        out.cross += &a * c.transpose();
    }
    let scale = 1.0 / (b - 1.0);
    out.free *= scale;
    out.model *= scale;
    out.cross *= scale;
    Ok((out, draws.len()))
}

fn resample<R: Rng + ?Sized>(data: &HaplotypeData, rng: &mut R) -> HaplotypeData {
    let mut counts = vec![0.0; data.groups.len()];
    for d in 0..2u8 {
        let members: Vec<usize> = (0..data.groups.len()).filter(|&i| data.groups[i].d() == d).collect();
        let cum: Vec<f64> = members
            .iter()
            .scan(0.0, |acc, &i| {
                *acc += data.groups[i].w;
                Some(*acc)
            })
            .collect();
        let total = *cum.last().unwrap_or(&0.0);
        for _ in 0..total as usize {
            let u = rng.random::<f64>() * total;
            let pos = cum.partition_point(|&c| c <= u).min(members.len() - 1);
            counts[members[pos]] += 1.0;
        }
    }
    let mut out = data.clone();
    out.groups = data
        .groups
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0.0)
        .map(|(g, c)| Group { w: c, ..g.clone() })
        .collect();
    out
}
