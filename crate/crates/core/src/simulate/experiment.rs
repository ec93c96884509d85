use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use super::{
    fixation_genotype_probs, gwas_resample, simulate_haplotype_scenario, simulate_single_snp_with, substream,
    ScenarioSpec,
};
use crate::error::{Error, Result};
use crate::genotype::{genotype_counts, GeneticModel};
use crate::imputation::{
    hotelling_t2_test, prospective_imputed_test, retrospective_imputed_test, GenotypePosterior, PosteriorCache,
};
use crate::result::{Method, TestResult};
use crate::snp_tests::run_snp_test;

/// Rejection count of one method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Rate {
    pub rejections: usize,
    /// Replicates where the test produced a p-value.
    pub tested: usize,
    /// Replicates where the test failed (for example not testable).
    pub failures: usize,
}

impl Rate {
    fn record(&mut self, r: &Result<TestResult>, alpha: f64) {
        match r {
            Ok(t) => {
                self.tested += 1;
                self.rejections += usize::from(t.rejects(alpha));
            }
            Err(_) => self.failures += 1,
        }
    }

    pub fn proportion(&self) -> f64 {
        if self.tested == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.tested as f64
        }
    }

    /// `sqrt(p(1−p)/n)`.
    pub fn standard_error(&self) -> f64 {
        let p = self.proportion();
        (p * (1.0 - p) / self.tested as f64).sqrt()
    }
}

/// One method's size or power in one design.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub scenario: String,
    pub mode: GeneticModel,
    pub beta: f64,
    pub zeta: f64,
    pub alpha_level: f64,
    pub seed: u64,
    pub method: Method,
    /// Test applied to imputed genotypes (or typed loci for Hotelling's T²).
    pub imputed: Rate,
    /// Same test applied to the true untyped genotypes, when meaningful.
    pub truth: Option<Rate>,
}

impl PowerRow {
    pub fn kind(&self) -> &'static str {
        if self.beta == 0.0 {
            "size"
        } else {
            "power"
        }
    }
}

/// Rows in the layout of a size/power table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerReport {
    pub rows: Vec<PowerRow>,
}

const POWER_HEADER: &str = "scenario\tmode\tbeta\tzeta\talpha\tseed\tkind\tmethod\timputed_pct\timputed_se_pct\ttrue_pct\ttrue_se_pct\timputed_rejections\timputed_tested\timputed_failures\ttrue_rejections\ttrue_tested\ttrue_failures";

fn pct(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{:.1}", 100.0 * x)
    }
}

impl PowerReport {
    pub fn extend(&mut self, other: PowerReport) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, method: Method) -> Option<&PowerRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(POWER_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (tp, tse, tr, tt, tf) = match r.truth {
                Some(t) => (
                    pct(t.proportion()),
                    pct(t.standard_error()),
                    t.rejections.to_string(),
                    t.tested.to_string(),
                    t.failures.to_string(),
                ),
                None => ("NA".into(), "NA".into(), "NA".into(), "NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{tp}\t{tse}\t{}\t{}\t{}\t{tr}\t{tt}\t{tf}",
                r.scenario,
                r.mode,
                r.beta,
                r.zeta,
                r.alpha_level,
                r.seed,
                r.kind(),
                r.method,
                pct(r.imputed.proportion()),
                pct(r.imputed.standard_error()),
                r.imputed.rejections,
                r.imputed.tested,
                r.imputed.failures,
            );
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == POWER_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "unexpected power report header".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let err = |m: String| Error::Parse {
                line: line_no,
                message: m,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 18 {
                return Err(err(format!("expected 18 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let imputed = Rate {
                rejections: int(f[12])?,
                tested: int(f[13])?,
                failures: int(f[14])?,
            };
            let truth = if f[15] == "NA" {
                None
            } else {
                Some(Rate {
                    rejections: int(f[15])?,
                    tested: int(f[16])?,
                    failures: int(f[17])?,
                })
            };
            rows.push(PowerRow {
                scenario: f[0].to_string(),
                mode: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
                beta: num(f[2])?,
                zeta: num(f[3])?,
                alpha_level: num(f[4])?,
                seed: f[5].parse().map_err(|e| err(format!("{e}")))?,
                method: f[7].parse().map_err(|e: Error| err(e.to_string()))?,
                imputed,
                truth,
            });
        }
        Ok(Self { rows })
    }
}

/// Test results of one scenario replicate, in the order of the requested methods.
#[derive(Debug, Clone)]
pub struct ScenarioReplicate {
    pub imputed: Vec<Result<TestResult>>,
    /// `None` for methods without a true-genotype counterpart.
    pub truth: Vec<Option<Result<TestResult>>>,
    /// Subjects dropped as inconsistent with the reference panel.
    pub excluded: usize,
}

const SCENARIO_METHODS: [Method; 3] = [
    Method::ProspectiveImputed,
    Method::RetrospectiveImputed,
    Method::Hotelling,
];

fn check_methods(methods: &[Method], allowed: &[Method]) -> Result<()> {
    for m in methods {
        if !allowed.contains(m) {
            return Err(Error::ContractViolation(format!(
                "method {m} is not available here (choose from: {})",
                allowed.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
            )));
        }
    }
    Ok(())
}

impl ScenarioSpec {
    /// Generates replicate `r` and runs each method on imputed and true genotypes.
    pub fn replicate(&self, r: u64, methods: &[Method]) -> Result<ScenarioReplicate> {
        check_methods(methods, &SCENARIO_METHODS)?;
        let mut rng = substream(self.seed, r);
        let sample = simulate_haplotype_scenario(self, &mut rng)?;
        let data = &sample.typed;
        let mut cache = PosteriorCache::new(&self.reference);
        let mut post = Vec::with_capacity(data.n_subjects());
        let mut truth = Vec::with_capacity(data.n_subjects());
        let mut typed = Vec::with_capacity(data.n_subjects());
        let mut phen = Vec::with_capacity(data.n_subjects());
        let mut excluded = 0;
        for i in 0..data.n_subjects() {
            let g = data.subject(i);
            match cache.get(&g) {
                Ok(p) => {
                    post.push(p);
                    truth.push(GenotypePosterior::point_mass(sample.truth[i]));
                    typed.push(g);
                    phen.push(data.phenotypes()[i]);
                }
                Err(Error::InconsistentGenotype(_)) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        let mut out = ScenarioReplicate {
            imputed: Vec::new(),
            truth: Vec::new(),
            excluded,
        };
        for &m in methods {
            match m {
                Method::ProspectiveImputed => {
                    out.imputed.push(prospective_imputed_test(&post, &phen, self.mode));
                    out.truth.push(Some(prospective_imputed_test(&truth, &phen, self.mode)));
                }
                Method::RetrospectiveImputed => {
                    out.imputed
                        .push(retrospective_imputed_test(&post, &phen, self.mode, self.retro_variance));
                    out.truth.push(Some(retrospective_imputed_test(
                        &truth,
                        &phen,
                        self.mode,
                        self.retro_variance,
                    )));
                }
                _ => {
                    out.imputed.push(hotelling_t2_test(&typed, &phen));
                    out.truth.push(None);
                }
            }
        }
        Ok(out)
    }
}

/// Runs `spec.replicates` independent replicates (in parallel) and tallies
/// rejections at `spec.alpha_level`. Deterministic given `spec.seed`.
pub fn run_power_experiment(spec: &ScenarioSpec, methods: &[Method]) -> Result<PowerReport> {
    spec.validate()?;
    check_methods(methods, &SCENARIO_METHODS)?;
    let reps: Vec<ScenarioReplicate> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|r| spec.replicate(r, methods))
        .collect::<Result<_>>()?;
    let mut rows: Vec<PowerRow> = methods
        .iter()
        .map(|&method| PowerRow {
            scenario: spec.name.clone(),
            mode: spec.mode,
            beta: spec.beta,
            zeta: spec.zeta,
            alpha_level: spec.alpha_level,
            seed: spec.seed,
            method,
            imputed: Rate::default(),
            truth: None,
        })
        .collect();
    for rep in &reps {
        for (k, row) in rows.iter_mut().enumerate() {
            row.imputed.record(&rep.imputed[k], spec.alpha_level);
            if let Some(t) = &rep.truth[k] {
                row.truth.get_or_insert_with(Rate::default).record(t, spec.alpha_level);
            }
        }
    }
    Ok(PowerReport { rows })
}

/// Typed single-SNP size or power study.
#[derive(Debug, Clone, PartialEq)]
pub struct SnpExperiment {
    pub f: f64,
    /// Fixation index of the population genotype law.
    pub zeta: f64,
    /// Coding of the true effect.
    pub truth_model: GeneticModel,
    pub beta: Vec<f64>,
    /// Coding used by the tests.
    pub test_model: GeneticModel,
    pub n_cases: u64,
    pub n_controls: u64,
    pub replicates: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnpExperimentReport {
    pub methods: Vec<Method>,
    pub alphas: Vec<f64>,
    /// `rates[method][alpha]`.
    pub rates: Vec<Vec<Rate>>,
}

impl SnpExperimentReport {
    pub fn rate(&self, method: Method, alpha: f64) -> Option<Rate> {
        let m = self.methods.iter().position(|&x| x == method)?;
        let a = self.alphas.iter().position(|&x| x == alpha)?;
        Some(self.rates[m][a])
    }
}

pub fn run_snp_experiment(exp: &SnpExperiment, methods: &[Method]) -> Result<SnpExperimentReport> {
    check_methods(methods, &Method::TYPED)?;
    let control = fixation_genotype_probs(exp.f, exp.zeta)?;
    let per_rep: Vec<Vec<Result<TestResult>>> = (0..exp.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(exp.seed, r);
            let t = simulate_single_snp_with(
                &control,
                exp.truth_model,
                &exp.beta,
                exp.n_cases,
                exp.n_controls,
                &mut rng,
            )?;
            Ok(methods.iter().map(|&m| run_snp_test(m, &t, exp.test_model)).collect())
        })
        .collect::<Result<_>>()?;
    let mut rates = vec![vec![Rate::default(); exp.alphas.len()]; methods.len()];
    for rep in &per_rep {
        for (m, res) in rep.iter().enumerate() {
            for (a, &alpha) in exp.alphas.iter().enumerate() {
                rates[m][a].record(res, alpha);
            }
        }
    }
    Ok(SnpExperimentReport {
        methods: methods.to_vec(),
        alphas: exp.alphas.clone(),
        rates,
    })
}

/// Genome-wide ranking study: one causal SNP among synthetic null SNPs, with
/// subject profiles resampled from a synthetic control panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RankExperiment {
    pub n_null: usize,
    pub panel_size: usize,
    pub causal_maf: f64,
    pub causal_model: GeneticModel,
    pub beta: f64,
    pub test_model: GeneticModel,
    pub n_cases: u64,
    pub n_controls: u64,
    pub replicates: usize,
    pub seed: u64,
    /// Null minor allele frequencies are uniform on this range.
    pub null_maf: (f64, f64),
    /// Share of null SNPs drawn with a positive fixation index.
    pub violation_share: f64,
    /// Fixation indices of violating SNPs are uniform on `(0, zeta_max)`.
    pub zeta_max: f64,
}

impl Default for RankExperiment {
    fn default() -> Self {
        Self {
            n_null: 10_000,
            panel_size: 4000,
            causal_maf: 0.3,
            causal_model: GeneticModel::Recessive,
            beta: 3f64.ln(),
            test_model: GeneticModel::Codominant,
            n_cases: 550,
            n_controls: 550,
            replicates: 50,
            seed: 1,
            null_maf: (0.05, 0.5),
            violation_share: 0.0,
            zeta_max: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOutcome {
    pub methods: Vec<Method>,
    /// `ranks[method][replicate]`, 1 = most significant.
    pub ranks: Vec<Vec<usize>>,
}

impl RankOutcome {
    pub fn median(&self, method: Method) -> Option<f64> {
        let k = self.methods.iter().position(|&m| m == method)?;
        let mut r: Vec<usize> = self.ranks[k].clone();
        r.sort_unstable();
        let n = r.len();
        if n == 0 {
            return None;
        }
        Some(if n % 2 == 1 {
            r[n / 2] as f64
        } else {
            (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0
        })
    }
}

fn synthetic_panel(exp: &RankExperiment) -> Result<(Vec<Vec<u8>>, Vec<String>)> {
    let mut rng = substream(exp.seed, u64::MAX);
    let n_loci = exp.n_null + 1;
    let mut laws = Vec::with_capacity(n_loci);
    laws.push(fixation_genotype_probs(exp.causal_maf, 0.0)?);
    for _ in 0..exp.n_null {
        let f = rng.random_range(exp.null_maf.0..exp.null_maf.1);
        let zeta = if rng.random::<f64>() < exp.violation_share {
            rng.random_range(0.0..exp.zeta_max.max(1e-12))
        } else {
            0.0
        };
        laws.push(fixation_genotype_probs(f, zeta)?);
    }
    let panel = (0..exp.panel_size)
        .map(|_| {
            laws.iter()
                .map(|p| {
                    let u = rng.random::<f64>();
                    if u < p[0] {
                        0
                    } else if u < p[0] + p[1] {
                        1
                    } else {
                        2
                    }
                })
                .collect()
        })
        .collect();
    let ids = std::iter::once("causal".to_string())
        .chain((1..n_loci).map(|j| format!("null{j}")))
        .collect();
    Ok((panel, ids))
}

/// Rank of the causal SNP (locus 0) among all loci by ascending p-value;
/// untestable loci count as `p = 1`.
pub fn rank_experiment(exp: &RankExperiment, methods: &[Method]) -> Result<RankOutcome> {
    check_methods(methods, &Method::TYPED)?;
    let (panel, ids) = synthetic_panel(exp)?;
    let per_rep: Vec<Vec<usize>> = (0..exp.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(exp.seed, r);
            let data = gwas_resample(
                &panel,
                &ids,
                0,
                exp.causal_maf,
                exp.causal_model,
                &[exp.beta],
                exp.n_cases,
                exp.n_controls,
                &mut rng,
            )?;
            let mut pvals = vec![Vec::with_capacity(ids.len()); methods.len()];
            for j in 0..ids.len() {
                let t = genotype_counts(&data, j)?;
                for (k, &m) in methods.iter().enumerate() {
                    pvals[k].push(run_snp_test(m, &t, exp.test_model).map_or(1.0, |r| r.p_value));
                }
            }
            Ok(pvals
                .iter()
                .map(|p| 1 + p[1..].iter().filter(|&&x| x < p[0]).count())
                .collect())
        })
        .collect::<Result<_>>()?;
    let ranks = (0..methods.len())
        .map(|k| per_rep.iter().map(|r| r[k]).collect())
        .collect();
    Ok(RankOutcome {
        methods: methods.to_vec(),
        ranks,
    })
}
