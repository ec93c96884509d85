use nalgebra::DVector;

use super::{Diplotype, EnvironmentTerm, Group, HaplotypeData, RiskModelSpec};
use crate::error::{Error, Result};

/// Log-likelihoods and analytic scores in the packed parameterization
/// `x = (β, κ, γ)`, where `θ_k ∝ exp(γ_k)` and the reference haplotype has `γ = 0`.
#[derive(Debug, Clone)]
pub struct HaplotypeLikelihood<'a> {
    data: &'a HaplotypeData,
    spec: &'a RiskModelSpec,
    target: usize,
    reference: usize,
    p: usize,
    k: usize,
}

/// Value, `∂/∂(β, κ)` and `∂/∂θ` (θ treated as unconstrained).
struct Raw {
    value: f64,
    phi: [f64; 4],
    theta: Vec<(usize, f64)>,
}

impl<'a> HaplotypeLikelihood<'a> {
    pub fn new(data: &'a HaplotypeData, spec: &'a RiskModelSpec, reference: usize) -> Result<Self> {
        let target = data
            .target_index(&spec.target)
            .ok_or_else(|| Error::NotIdentifiable(format!("target haplotype {:?} has no support", spec.target)))?;
        if spec.environment != EnvironmentTerm::None && !data.has_environment() {
            return Err(Error::ContractViolation(
                "risk model has environment terms but data has none".into(),
            ));
        }
        let k = data.haplotypes().len();
        if reference >= k {
            return Err(Error::ContractViolation("reference haplotype out of range".into()));
        }
        Ok(Self {
            data,
            spec,
            target,
            reference,
            p: spec.n_beta(),
            k,
        })
    }

    pub fn dim(&self) -> usize {
        self.p + self.k
    }

    pub fn n_beta(&self) -> usize {
        self.p
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Packs `(β, κ, θ)`; every `θ_k` must be positive.
    pub fn pack(&self, beta: &[f64], kappa: f64, theta: &[f64]) -> Result<DVector<f64>> {
        if beta.len() != self.p || theta.len() != self.k {
            return Err(Error::ContractViolation(
                "parameter dimensions do not match the model".into(),
            ));
        }
        if theta.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Domain("packed frequencies must be positive".into()));
        }
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(0, self.p).copy_from_slice(beta);
        x[self.p] = kappa;
        let log_ref = theta[self.reference].ln();
        for (slot, k) in self.gamma_indices().enumerate() {
            x[self.p + 1 + slot] = theta[k].ln() - log_ref;
        }
        Ok(x)
    }

    fn gamma_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.k).filter(move |&k| k != self.reference)
    }

    pub fn theta(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.k];
        for (slot, k) in self.gamma_indices().enumerate() {
            g[k] = x[self.p + 1 + slot];
        }
        let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = g.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    pub fn beta<'x>(&self, x: &'x DVector<f64>) -> &'x [f64] {
        &x.as_slice()[..self.p]
    }

    pub fn kappa(&self, x: &DVector<f64>) -> f64 {
        x[self.p]
    }

    fn eta(&self, beta: &[f64], kappa: f64, copies: u8, env: f64) -> (f64, [f64; 4]) {
        let z = self.spec.design(copies, env);
        let mut zt = [0.0; 4];
        let mut eta = kappa;
        for j in 0..self.p {
            zt[j] = z[j];
            eta += beta[j] * z[j];
        }
        zt[self.p] = 1.0;
        (eta, zt)
    }

    /// `Σ_{h∈H_G} q(h) e^{D η_h}` with derivatives; `s` overrides `D` when given.
    fn numerator(&self, g: &Group, beta: &[f64], kappa: f64, theta: &[f64], s: Option<u8>) -> Raw {
        let d = f64::from(s.unwrap_or(g.d()));
        let mut num = 0.0;
        let mut phi = [0.0; 4];
        let mut dtheta = Vec::with_capacity(2 * g.diplos.len());
        for &h in &g.diplos {
            let (eta, zt) = self.eta(beta, kappa, h.copies(self.target), g.env);
            let t = (d * eta).exp();
            let q = super::diplotype_prior(h, theta);
            num += q * t;
            for j in 0..=self.p {
                phi[j] += q * t * d * zt[j];
            }
            push_prior_derivative(&mut dtheta, h, theta, t);
        }
        Raw {
            value: num,
            phi,
            theta: dtheta,
        }
    }

    fn model_raw(&self, g: &Group, beta: &[f64], kappa: f64, theta: &[f64]) -> Raw {
        let num = self.numerator(g, beta, kappa, theta, None);
        let tt = theta[self.target];
        let probs = [(1.0 - tt) * (1.0 - tt), 2.0 * tt * (1.0 - tt), tt * tt];
        let dprobs = [-2.0 * (1.0 - tt), 2.0 - 4.0 * tt, 2.0 * tt];
        let mut den = 1.0;
        let mut dphi = [0.0; 4];
        let mut dtt = 0.0;
        for x in 0..3u8 {
            let (eta, zt) = self.eta(beta, kappa, x, g.env);
            let e = eta.exp();
            den += probs[x as usize] * e;
            dtt += dprobs[x as usize] * e;
            for j in 0..=self.p {
                dphi[j] += probs[x as usize] * e * zt[j];
            }
        }
        combine(num, den, dphi, vec![(self.target, dtt)], self.p)
    }

    fn free_raw(&self, g: &Group, beta: &[f64], kappa: f64, theta: &[f64]) -> Raw {
        let num = self.numerator(g, beta, kappa, theta, None);
        let zero = self.numerator(g, beta, kappa, theta, Some(0));
        let one = self.numerator(g, beta, kappa, theta, Some(1));
        let mut dphi = [0.0; 4];
        for j in 0..=self.p {
            dphi[j] = zero.phi[j] + one.phi[j];
        }
        let mut dtheta = zero.theta;
        dtheta.extend(one.theta);
        combine(num, zero.value + one.value, dphi, dtheta, self.p)
    }

    fn control_raw(&self, g: &Group, theta: &[f64]) -> Raw {
        let mut total = 0.0;
        let mut dtheta = Vec::new();
        for &h in &g.diplos {
            total += super::diplotype_prior(h, theta);
            push_prior_derivative(&mut dtheta, h, theta, 1.0);
        }
        for v in &mut dtheta {
            v.1 /= total;
        }
        Raw {
            value: total.ln(),
            phi: [0.0; 4],
            theta: dtheta,
        }
    }

    /// Maps a raw gradient to packed coordinates:
    /// `∂/∂γ_k = θ_k(∂/∂θ_k − Σ_j θ_j ∂/∂θ_j)`.
    fn pack_gradient(&self, raw: &Raw, theta: &[f64], with_phi: bool) -> DVector<f64> {
        let mut dense = vec![0.0; self.k];
        for &(j, v) in &raw.theta {
            dense[j] += v;
        }
        let avg: f64 = dense.iter().zip(theta).map(|(a, b)| a * b).sum();
        let mut out = DVector::zeros(self.dim());
        if with_phi {
            for j in 0..=self.p {
                out[j] = raw.phi[j];
            }
        }
        for (slot, k) in self.gamma_indices().enumerate() {
            out[self.p + 1 + slot] = theta[k] * (dense[k] - avg);
        }
        out
    }

    fn contributions<F>(&self, x: &DVector<f64>, f: F) -> Vec<(f64, DVector<f64>)>
    where
        F: Fn(&Group, &[f64], f64, &[f64]) -> Option<(Raw, bool)>,
    {
        let theta = self.theta(x);
        let beta = self.beta(x);
        let kappa = self.kappa(x);
        self.data
            .groups
            .iter()
            .map(|g| match f(g, beta, kappa, &theta) {
                Some((raw, with_phi)) => (raw.value, self.pack_gradient(&raw, &theta, with_phi)),
                None => (0.0, DVector::zeros(self.dim())),
            })
            .collect()
    }

    /// Per-group log `L_model` and score (unweighted), in group order.
    pub fn model_contributions(&self, x: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
        self.contributions(x, |g, b, k, t| Some((self.model_raw(g, b, k, t), true)))
    }

    /// Per-group log `L_free` and score (unweighted).
    pub fn free_contributions(&self, x: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
        self.contributions(x, |g, b, k, t| Some((self.free_raw(g, b, k, t), true)))
    }

    /// Per-group control genotype log-likelihood under HWE; zero for cases.
    pub fn control_contributions(&self, x: &DVector<f64>) -> Vec<(f64, DVector<f64>)> {
        self.contributions(x, |g, _, _, t| (g.d() == 0).then(|| (self.control_raw(g, t), false)))
    }

    fn total(&self, parts: Vec<(f64, DVector<f64>)>) -> (f64, DVector<f64>) {
        let mut value = 0.0;
        let mut grad = DVector::zeros(self.dim());
        for (g, (v, s)) in self.data.groups.iter().zip(parts) {
            value += g.w * v;
            grad += s * g.w;
        }
        (value, grad)
    }

    pub fn model(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.total(self.model_contributions(x))
    }

    pub fn free(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.total(self.free_contributions(x))
    }

    pub fn controls(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        self.total(self.control_contributions(x))
    }

    /// Per-group stacked estimating function: the `(β, κ)` score of `L_free`
    /// above the control-only frequency score.
    pub fn stacked_contributions(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let free = self.free_contributions(x);
        let ctrl = self.control_contributions(x);
        free.into_iter()
            .zip(ctrl)
            .map(|((_, sf), (_, sc))| {
                let mut out = sc;
                out.rows_mut(0, self.p + 1).copy_from(&sf.rows(0, self.p + 1));
                out
            })
            .collect()
    }

    pub fn stacked(&self, x: &DVector<f64>) -> DVector<f64> {
        self.data
            .groups
            .iter()
            .zip(self.stacked_contributions(x))
            .fold(DVector::zeros(self.dim()), |acc, (g, s)| acc + s * g.w)
    }

    pub(crate) fn groups(&self) -> &[Group] {
        &self.data.groups
    }
}

fn push_prior_derivative(out: &mut Vec<(usize, f64)>, h: Diplotype, theta: &[f64], scale: f64) {
    if h.is_homozygous() {
        out.push((h.a, 2.0 * theta[h.a] * scale));
    } else {
        out.push((h.a, 2.0 * theta[h.b] * scale));
        out.push((h.b, 2.0 * theta[h.a] * scale));
    }
}

/// `log(num) − log(den)` with derivatives, given raw derivatives of each.
fn combine(num: Raw, den: f64, dden_phi: [f64; 4], dden_theta: Vec<(usize, f64)>, p: usize) -> Raw {
    let mut phi = [0.0; 4];
    for j in 0..=p {
        phi[j] = num.phi[j] / num.value - dden_phi[j] / den;
    }
    let mut theta: Vec<(usize, f64)> = num.theta.into_iter().map(|(j, v)| (j, v / num.value)).collect();
    theta.extend(dden_theta.into_iter().map(|(j, v)| (j, -v / den)));
    Raw {
        value: num.value.ln() - den.ln(),
        phi,
        theta,
    }
}

fn check_params(data: &HaplotypeData, spec: &RiskModelSpec, beta: &[f64], theta: &[f64]) -> Result<()> {
    if beta.len() != spec.n_beta() || theta.len() != data.haplotypes().len() {
        return Err(Error::ContractViolation(
            "parameter dimensions do not match the model".into(),
        ));
    }
    let total: f64 = theta.iter().sum();
    if theta.iter().any(|&t| t < 0.0) || (total - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("haplotype frequencies must lie on the simplex".into()));
    }
    Ok(())
}

fn weighted_sum(lik: &HaplotypeLikelihood<'_>, f: impl Fn(&Group) -> Raw) -> f64 {
    lik.groups().iter().map(|g| g.w * f(g).value).sum()
}

/// `Σᵢ log L_model(Dᵢ, Gᵢ, Eᵢ; β, θ, κ)`. Zero frequencies are allowed.
pub fn loglik_model(
    data: &HaplotypeData,
    spec: &RiskModelSpec,
    beta: &[f64],
    theta: &[f64],
    kappa: f64,
) -> Result<f64> {
    check_params(data, spec, beta, theta)?;
    let lik = HaplotypeLikelihood::new(data, spec, 0)?;
    Ok(weighted_sum(&lik, |g| lik.model_raw(g, beta, kappa, theta)))
}

/// `Σᵢ log L_free(Dᵢ, Gᵢ, Eᵢ; β, θ, κ)`.
pub fn loglik_free(data: &HaplotypeData, spec: &RiskModelSpec, beta: &[f64], theta: &[f64], kappa: f64) -> Result<f64> {
    check_params(data, spec, beta, theta)?;
    let lik = HaplotypeLikelihood::new(data, spec, 0)?;
    Ok(weighted_sum(&lik, |g| lik.free_raw(g, beta, kappa, theta)))
}
