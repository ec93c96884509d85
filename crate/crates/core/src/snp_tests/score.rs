//! Score statistics shared by typed and imputed SNPs.
//!
//! Every test is expressed over weighted rows `(w, D, E{m(G)}, E{G})`. A typed
//! SNP contributes one row per non-empty cell of its 2 x 3 table with point-mass
//! expectations, an imputed SNP one row per subject with posterior expectations.
//! Using one code path for both keeps the imputed statistics exactly equal to
//! their typed counterparts when the posteriors are degenerate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::genotype::{c_vector, hwe_expected_m, CountsTable, GeneticModel};
use crate::numeric::{project_psd, quadratic_statistic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ScoreRow {
    pub w: f64,
    pub d: u8,
    pub m: [f64; 2],
    pub g: f64,
}

/// Variance estimator for the retrospective score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetroVariance {
    /// `N₁[V_m + (N₁/2N){V_G/2 · CCᵀ − QCᵀ − CQᵀ}]` with pooled-sample moments.
    #[default]
    Pooled,
    /// `N₁{V_m − (N₁/2N) f̂(1−f̂) CCᵀ}`, the HWE-model value of `V_G/2` and `Q`.
    HweModel,
    /// Outer products of the per-subject efficient scores.
    Sandwich,
}

impl RetroVariance {
    pub fn name(self) -> &'static str {
        match self {
            RetroVariance::Pooled => "pooled",
            RetroVariance::HweModel => "hwe-model",
            RetroVariance::Sandwich => "sandwich",
        }
    }
}

impl std::str::FromStr for RetroVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" | "model" | "model-based" => Ok(RetroVariance::Pooled),
            "hwe-model" | "hwe" => Ok(RetroVariance::HweModel),
            "sandwich" | "robust" => Ok(RetroVariance::Sandwich),
            other => Err(Error::Domain(format!(
                "unknown variance estimator '{other}' (expected model-based, hwe-model or sandwich)"
            ))),
        }
    }
}

pub(crate) fn rows_from_counts(counts: &CountsTable, model: GeneticModel) -> Vec<ScoreRow> {
    let mut rows = Vec::with_capacity(6);
    for d in 0..2u8 {
        for g in 0..3u8 {
            let n = counts.n[d as usize][g as usize];
            if n > 0 {
                rows.push(ScoreRow {
                    w: n as f64,
                    d,
                    m: model.code(g),
                    g: g as f64,
                });
            }
        }
    }
    rows
}

/// Pooled sums needed by all three tests.
pub(crate) struct Moments {
    pub dim: usize,
    pub n: f64,
    pub n1: f64,
    pub n0: f64,
    pub case_sum: DVector<f64>,
    pub control_sum: DVector<f64>,
    pub mean_m: DVector<f64>,
    pub var_m: DMatrix<f64>,
    pub var_g: f64,
    /// Pooled covariance between `m` and `G`.
    pub q: DVector<f64>,
    pub f_hat: f64,
}

impl Moments {
    pub fn new(rows: &[ScoreRow], dim: usize) -> Result<Self> {
        let mut n1 = 0.0;
        let mut n0 = 0.0;
        let mut case_sum = DVector::zeros(dim);
        let mut control_sum = DVector::zeros(dim);
        let mut g_sum = 0.0;
        for r in rows {
            let target = if r.d == 1 {
                n1 += r.w;
                &mut case_sum
            } else {
                n0 += r.w;
                &mut control_sum
            };
            for k in 0..dim {
                target[k] += r.w * r.m[k];
            }
            g_sum += r.w * r.g;
        }
        if n1 == 0.0 {
            return Err(Error::NotTestable("no cases".into()));
        }
        if n0 == 0.0 {
            return Err(Error::NotTestable("no controls".into()));
        }
        let n = n1 + n0;
        let mean_m = (&case_sum + &control_sum) / n;
        let mean_g = g_sum / n;
        let mut var_m = DMatrix::zeros(dim, dim);
        let mut var_g = 0.0;
        let mut q = DVector::zeros(dim);
        for r in rows {
            let dg = r.g - mean_g;
            var_g += r.w * dg * dg;
            for a in 0..dim {
                let da = r.m[a] - mean_m[a];
                q[a] += r.w * da * dg;
                for b in 0..dim {
                    var_m[(a, b)] += r.w * da * (r.m[b] - mean_m[b]);
                }
            }
        }
        var_m /= n;
        q /= n;
        var_g /= n;
        Ok(Self {
            dim,
            n,
            n1,
            n0,
            case_sum,
            control_sum,
            mean_m,
            var_m,
            var_g,
            q,
            f_hat: mean_g / 2.0,
        })
    }

    fn checked_f(&self) -> Result<f64> {
        let f = self.f_hat;
        if f <= 1e-12 || f >= 1.0 - 1e-12 {
            return Err(Error::DegenerateFrequency(f));
        }
        Ok(f)
    }
}

/// Score and variance of a test before reduction to a chi-square statistic.
pub(crate) struct ScoreParts {
    pub u: DVector<f64>,
    pub v: DMatrix<f64>,
    pub psd_projected: bool,
}

impl ScoreParts {
    pub fn statistic(&self) -> Result<(f64, usize)> {
        quadratic_statistic(&self.u, &self.v)
    }
}

pub(crate) fn prospective_parts(mo: &Moments) -> ScoreParts {
    let scale = mo.n1 * mo.n0 / mo.n;
    let u = (&mo.case_sum / mo.n1 - &mo.control_sum / mo.n0) * scale;
    let v = &mo.var_m * scale;
    ScoreParts {
        u,
        v,
        psd_projected: false,
    }
}

fn retrospective_score(mo: &Moments, e_hwe: &DVector<f64>) -> DVector<f64> {
    &mo.case_sum - e_hwe * mo.n1
}

/// Per-row efficient scores `D[m − E_HWE] − (N₁/2N) C (G − 2f̂)`.
fn retrospective_influence(
    rows: &[ScoreRow],
    mo: &Moments,
    e_hwe: &DVector<f64>,
    c: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let ratio = mo.n1 / (2.0 * mo.n);
    rows.iter()
        .map(|r| {
            let mut u = DVector::zeros(mo.dim);
            if r.d == 1 {
                for k in 0..mo.dim {
                    u[k] = r.m[k] - e_hwe[k];
                }
            }
            u - c * (ratio * (r.g - 2.0 * mo.f_hat))
        })
        .collect()
}

fn prospective_influence(rows: &[ScoreRow], mo: &Moments) -> Vec<DVector<f64>> {
    let p = mo.n1 / mo.n;
    rows.iter()
        .map(|r| {
            let mut u = DVector::zeros(mo.dim);
            for k in 0..mo.dim {
                u[k] = (f64::from(r.d) - p) * (r.m[k] - mo.mean_m[k]);
            }
            u
        })
        .collect()
}

fn pooled_retro_variance(mo: &Moments, c: &DVector<f64>) -> DMatrix<f64> {
    let ratio = mo.n1 / (2.0 * mo.n);
    let cc = c * c.transpose();
    let qc = &mo.q * c.transpose();
    let inner = &cc * (mo.var_g / 2.0) - &qc - qc.transpose();
    (&mo.var_m + inner * ratio) * mo.n1
}

pub(crate) fn retrospective_parts(
    rows: &[ScoreRow],
    mo: &Moments,
    model: GeneticModel,
    kind: RetroVariance,
) -> Result<ScoreParts> {
    let f = mo.checked_f()?;
    let e_hwe = hwe_expected_m(model, f)?;
    let c = c_vector(model, f)?;
    let u = retrospective_score(mo, &e_hwe);
    let raw = match kind {
        RetroVariance::Pooled => pooled_retro_variance(mo, &c),
        RetroVariance::HweModel => {
            let ratio = mo.n1 / (2.0 * mo.n);
            (&mo.var_m - (&c * c.transpose()) * (ratio * f * (1.0 - f))) * mo.n1
        }
        RetroVariance::Sandwich => {
            let infl = retrospective_influence(rows, mo, &e_hwe, &c);
            let mut v = DMatrix::zeros(mo.dim, mo.dim);
            for (r, s) in rows.iter().zip(&infl) {
                v += (s * s.transpose()) * r.w;
            }
            v
        }
    };
    let (v, psd_projected) = project_psd(&raw);
    Ok(ScoreParts { u, v, psd_projected })
}

/// Bias/variance diagnostics of the empirical-Bayes mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EbDiagnostics {
    /// `m̄(G) − E_HWE,f̂{m(G)}`.
    pub tau_hat: DVector<f64>,
    /// Variance of the sample mean of `m(G)`, `s²/N`.
    pub s2_over_n: DVector<f64>,
    /// Weight on the HWE mean, `(s²/N)/((s²/N) + τ̂²)`.
    pub weights: DVector<f64>,
}

pub(crate) fn eb_parts(rows: &[ScoreRow], mo: &Moments, model: GeneticModel) -> Result<(ScoreParts, EbDiagnostics)> {
    let f = mo.checked_f()?;
    let e_hwe = hwe_expected_m(model, f)?;
    let c = c_vector(model, f)?;
    let dim = mo.dim;
    let tau_hat = &mo.mean_m - &e_hwe;
    let s2_over_n = DVector::from_fn(dim, |k, _| mo.var_m[(k, k)] / mo.n);
    let weights = DVector::from_fn(dim, |k, _| {
        let denom = s2_over_n[k] + tau_hat[k] * tau_hat[k];
        if denom > 0.0 {
            s2_over_n[k] / denom
        } else {
            1.0
        }
    });
    let e_eb = DVector::from_fn(dim, |k, _| weights[k] * e_hwe[k] + (1.0 - weights[k]) * mo.mean_m[k]);
    let u = &mo.case_sum - &e_eb * mo.n1;

    // W V_RL W + (I−W) V_PL (I−W) + cross terms, the cross covariance taken
    // from the per-row efficient scores of both tests.
    let w = DMatrix::from_diagonal(&weights);
    let iw = DMatrix::identity(dim, dim) - &w;
    let v_rl = pooled_retro_variance(mo, &c);
    let v_pl = &mo.var_m * (mo.n1 * mo.n0 / mo.n);
    let rl = retrospective_influence(rows, mo, &e_hwe, &c);
    let pl = prospective_influence(rows, mo);
    let mut cross = DMatrix::zeros(dim, dim);
    for ((r, a), b) in rows.iter().zip(&rl).zip(&pl) {
        cross += (a * b.transpose()) * r.w;
    }
    let mixed = &w * &cross * &iw;
    let raw = &w * v_rl * &w + &iw * v_pl * &iw + &mixed + mixed.transpose();
    let (v, psd_projected) = project_psd(&raw);
    Ok((
        ScoreParts { u, v, psd_projected },
        EbDiagnostics {
            tau_hat,
            s2_over_n,
            weights,
        },
    ))
}
