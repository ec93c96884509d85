//! Reference-panel imputation of an untyped SNP and the imputed-genotype
//! score tests, plus the multimarker Hotelling's T² baseline on typed loci.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::genotype::{GeneticModel, GenotypeDataset, MISSING};
use crate::numeric::{pooled_moments, quadratic_statistic};
use crate::result::{Method, TestResult};
use crate::snp_tests::score::{prospective_parts, retrospective_parts, Moments, ScoreRow};
use crate::snp_tests::RetroVariance;

/// Haplotypes over typed loci plus one untyped locus, with population frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePanel {
    loci: Vec<String>,
    untyped: usize,
    haplotypes: Vec<Vec<u8>>,
    freqs: Vec<f64>,
    effect_allele: u8,
}

impl ReferencePanel {
    /// Frequencies must be nonnegative and sum to one (within `1e-6`; they are
    /// renormalized exactly). The untyped genotype counts copies of allele `1`
    /// unless changed with [`with_effect_allele`](Self::with_effect_allele).
    pub fn new(loci: Vec<String>, untyped: usize, haplotypes: Vec<Vec<u8>>, freqs: Vec<f64>) -> Result<Self> {
        if untyped >= loci.len() {
            return Err(Error::ContractViolation(format!(
                "untyped index {untyped} out of range"
            )));
        }
        if loci.len() < 2 {
            return Err(Error::ContractViolation("panel needs at least one typed locus".into()));
        }
        if haplotypes.is_empty() || haplotypes.len() != freqs.len() {
            return Err(Error::ContractViolation("one frequency per haplotype required".into()));
        }
        for h in &haplotypes {
            if h.len() != loci.len() {
                return Err(Error::ContractViolation(
                    "haplotype length differs from locus count".into(),
                ));
            }
            if h.iter().any(|&a| a > 1) {
                return Err(Error::Domain("haplotype alleles must be 0 or 1".into()));
            }
        }
        let freqs = normalize_simplex(freqs)?;
        Ok(Self {
            loci,
            untyped,
            haplotypes,
            freqs,
            effect_allele: 1,
        })
    }

    pub fn with_effect_allele(mut self, allele: u8) -> Result<Self> {
        if allele > 1 {
            return Err(Error::Domain("effect allele must be 0 or 1".into()));
        }
        self.effect_allele = allele;
        Ok(self)
    }

    /// Same haplotypes with a different frequency vector.
    pub fn with_freqs(&self, freqs: Vec<f64>) -> Result<Self> {
        if freqs.len() != self.haplotypes.len() {
            return Err(Error::ContractViolation("one frequency per haplotype required".into()));
        }
        let mut out = self.clone();
        out.freqs = normalize_simplex(freqs)?;
        Ok(out)
    }

    pub fn loci(&self) -> &[String] {
        &self.loci
    }

    pub fn untyped_index(&self) -> usize {
        self.untyped
    }

    pub fn untyped_id(&self) -> &str {
        &self.loci[self.untyped]
    }

    pub fn typed_indices(&self) -> Vec<usize> {
        (0..self.loci.len()).filter(|&j| j != self.untyped).collect()
    }

    pub fn typed_ids(&self) -> Vec<String> {
        self.typed_indices().into_iter().map(|j| self.loci[j].clone()).collect()
    }

    pub fn haplotypes(&self) -> &[Vec<u8>] {
        &self.haplotypes
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn effect_allele(&self) -> u8 {
        self.effect_allele
    }

    /// Alleles of haplotype `h` at the typed loci.
    pub fn typed_alleles(&self, h: usize) -> Vec<u8> {
        self.typed_indices()
            .into_iter()
            .map(|j| self.haplotypes[h][j])
            .collect()
    }

    /// Whether haplotype `h` carries the effect allele at the untyped locus.
    pub fn carries_effect(&self, h: usize) -> bool {
        self.haplotypes[h][self.untyped] == self.effect_allele
    }

    /// Population frequency of the effect allele at the untyped locus.
    pub fn effect_allele_freq(&self) -> f64 {
        (0..self.haplotypes.len())
            .filter(|&h| self.carries_effect(h))
            .map(|h| self.freqs[h])
            .sum()
    }
}

pub(crate) fn normalize_simplex(freqs: Vec<f64>) -> Result<Vec<f64>> {
    if freqs.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
        return Err(Error::Domain("frequencies must be finite and nonnegative".into()));
    }
    let total: f64 = freqs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("frequencies sum to {total}, expected 1")));
    }
    Ok(freqs.into_iter().map(|f| f / total).collect())
}

/// Posterior distribution of the untyped genotype given neighbouring typed genotypes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenotypePosterior {
    pub probs: [f64; 3],
}

impl GenotypePosterior {
    pub fn point_mass(g: u8) -> Self {
        let mut probs = [0.0; 3];
        probs[g as usize] = 1.0;
        Self { probs }
    }

    /// `E{G | N(G)}`.
    pub fn e_g(&self) -> f64 {
        self.probs[1] + 2.0 * self.probs[2]
    }

    /// `E{m(G) | N(G)}` (first `model.dim()` entries meaningful).
    pub fn e_m(&self, model: GeneticModel) -> [f64; 2] {
        model.expect(&self.probs)
    }
}

/// Enumerates every ordered pair of panel haplotypes whose typed alleles sum
/// to `typed`, weights it by `θ_a θ_b`, and marginalizes the untyped allele count.
pub fn genotype_posterior(panel: &ReferencePanel, typed: &[u8]) -> Result<GenotypePosterior> {
    let idx = panel.typed_indices();
    if typed.len() != idx.len() {
        return Err(Error::ContractViolation(format!(
            "expected {} typed genotypes, got {}",
            idx.len(),
            typed.len()
        )));
    }
    if typed.iter().any(|&g| g > 2) {
        return Err(Error::Domain("typed genotypes must be 0, 1 or 2 (no missing)".into()));
    }
    let h = panel.haplotypes();
    let theta = panel.freqs();
    let mut probs = [0.0; 3];
    for a in 0..h.len() {
        if theta[a] == 0.0 {
            continue;
        }
        for b in 0..h.len() {
            if theta[b] == 0.0 {
                continue;
            }
            let consistent = idx.iter().zip(typed).all(|(&j, &g)| h[a][j] + h[b][j] == g);
            if consistent {
                let count = usize::from(panel.carries_effect(a)) + usize::from(panel.carries_effect(b));
                probs[count] += theta[a] * theta[b];
            }
        }
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InconsistentGenotype(format!("{typed:?}")));
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(GenotypePosterior { probs })
}

/// Memoizes posteriors per distinct typed-genotype vector. Intended to be
/// owned by one worker.
#[derive(Debug)]
pub struct PosteriorCache<'a> {
    panel: &'a ReferencePanel,
    map: HashMap<Vec<u8>, Result<GenotypePosterior>>,
}

impl<'a> PosteriorCache<'a> {
    pub fn new(panel: &'a ReferencePanel) -> Self {
        Self {
            panel,
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, typed: &[u8]) -> Result<GenotypePosterior> {
        if let Some(r) = self.map.get(typed) {
            return r.clone();
        }
        let r = genotype_posterior(self.panel, typed);
        self.map.insert(typed.to_vec(), r.clone());
        r
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// `f̂ᵘ = Σᵢ{P(G=1|·) + 2P(G=2|·)}/(2N)`.
pub fn imputed_allele_freq(posteriors: &[GenotypePosterior]) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::ContractViolation("no posteriors".into()));
    }
    Ok(posteriors.iter().map(|p| p.e_g()).sum::<f64>() / (2.0 * posteriors.len() as f64))
}

fn imputed_rows(posteriors: &[GenotypePosterior], phenotypes: &[u8], model: GeneticModel) -> Result<Vec<ScoreRow>> {
    if posteriors.len() != phenotypes.len() {
        return Err(Error::ContractViolation("one phenotype per posterior required".into()));
    }
    Ok(posteriors
        .iter()
        .zip(phenotypes)
        .map(|(p, &d)| ScoreRow {
            w: 1.0,
            d,
            m: p.e_m(model),
            g: p.e_g(),
        })
        .collect())
}

/// Prospective score test on `E{m(G)|N(G)}`.
pub fn prospective_imputed_test(
    posteriors: &[GenotypePosterior],
    phenotypes: &[u8],
    model: GeneticModel,
) -> Result<TestResult> {
    let rows = imputed_rows(posteriors, phenotypes, model)?;
    let mo = Moments::new(&rows, model.dim())?;
    let parts = prospective_parts(&mo);
    let (stat, df) = parts.statistic()?;
    Ok(TestResult::new(Method::ProspectiveImputed, stat, df)?.with("f_hat", mo.f_hat))
}

/// Retrospective score test with the imputed allele frequency `f̂ᵘ`.
///
/// [`RetroVariance::Pooled`] is the model-based estimate using pooled moments of
/// `E{m(G)|N(G)}` and `E{G|N(G)}`; [`RetroVariance::Sandwich`] the robust one.
pub fn retrospective_imputed_test(
    posteriors: &[GenotypePosterior],
    phenotypes: &[u8],
    model: GeneticModel,
    variance: RetroVariance,
) -> Result<TestResult> {
    let rows = imputed_rows(posteriors, phenotypes, model)?;
    let mo = Moments::new(&rows, model.dim())?;
    let parts = retrospective_parts(&rows, &mo, model, variance)?;
    let (stat, df) = parts.statistic()?;
    let mut r = TestResult::new(Method::RetrospectiveImputed, stat, df)?.with("f_hat", mo.f_hat);
    r.psd_projected = parts.psd_projected;
    #[cfg(debug_assertions)]
    if variance != RetroVariance::Sandwich {
        // surfaces disagreement between the model-based and robust estimates
        let alt = retrospective_parts(&rows, &mo, model, RetroVariance::Sandwich)?;
        if alt.v.trace() > 0.0 {
            r = r.with("sandwich_trace_ratio", parts.v.trace() / alt.v.trace());
        }
    }
    Ok(r)
}

/// Prospective score test with `m(G)` the vector of typed allele counts.
/// `typed[i]` holds the genotypes of subject `i`.
pub fn hotelling_t2_test(typed: &[Vec<u8>], phenotypes: &[u8]) -> Result<TestResult> {
    if typed.len() != phenotypes.len() {
        return Err(Error::ContractViolation("one phenotype per subject required".into()));
    }
    let n1 = phenotypes.iter().filter(|&&d| d == 1).count();
    let n0 = phenotypes.len() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(Error::NotTestable("Hotelling's T² needs two subjects per group".into()));
    }
    let dim = typed.first().map_or(0, Vec::len);
    if dim == 0 || typed.iter().any(|t| t.len() != dim) {
        return Err(Error::ContractViolation("ragged typed genotype matrix".into()));
    }
    let rows: Vec<Vec<f64>> = typed.iter().map(|t| t.iter().map(|&g| g as f64).collect()).collect();
    let (_, cov) = pooled_moments(rows.iter().map(Vec::as_slice), dim);
    let mut sum1 = DVector::zeros(dim);
    let mut sum0 = DVector::zeros(dim);
    for (r, &d) in rows.iter().zip(phenotypes) {
        let target = if d == 1 { &mut sum1 } else { &mut sum0 };
        for k in 0..dim {
            target[k] += r[k];
        }
    }
    let (n1, n0) = (n1 as f64, n0 as f64);
    let scale = n1 * n0 / (n1 + n0);
    let u = (sum1 / n1 - sum0 / n0) * scale;
    let v: DMatrix<f64> = cov * scale;
    let (stat, df) = quadratic_statistic(&u, &v)?;
    TestResult::new(Method::Hotelling, stat, df)
}

/// Imputation inputs derived from a genotype dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSample {
    pub posteriors: Vec<GenotypePosterior>,
    pub phenotypes: Vec<u8>,
    /// Typed genotypes of the retained subjects, in panel typed-locus order.
    pub typed: Vec<Vec<u8>>,
    pub subject_ids: Vec<String>,
    /// Subjects dropped for missing typed calls.
    pub excluded_missing: usize,
    /// Subjects dropped because no panel diplotype explains their genotypes.
    pub excluded_inconsistent: usize,
}

/// Matches dataset loci to the panel's typed loci by id and imputes every
/// subject. Subjects with missing or panel-inconsistent typed genotypes are
/// excluded and counted.
pub fn impute_dataset(panel: &ReferencePanel, data: &GenotypeDataset) -> Result<ImputedSample> {
    let cols: Vec<usize> = panel
        .typed_ids()
        .iter()
        .map(|id| {
            data.locus_index(id)
                .ok_or_else(|| Error::ContractViolation(format!("typed locus {id} missing from the genotype data")))
        })
        .collect::<Result<_>>()?;
    let mut cache = PosteriorCache::new(panel);
    let mut out = ImputedSample {
        posteriors: Vec::new(),
        phenotypes: Vec::new(),
        typed: Vec::new(),
        subject_ids: Vec::new(),
        excluded_missing: 0,
        excluded_inconsistent: 0,
    };
    for i in 0..data.n_subjects() {
        let g: Vec<u8> = cols.iter().map(|&j| data.locus(j)[i]).collect();
        if g.contains(&MISSING) {
            out.excluded_missing += 1;
            continue;
        }
        match cache.get(&g) {
            Ok(p) => {
                out.posteriors.push(p);
                out.phenotypes.push(data.phenotypes()[i]);
                out.typed.push(g);
                out.subject_ids.push(data.subject_ids()[i].clone());
            }
            Err(Error::InconsistentGenotype(_)) => out.excluded_inconsistent += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Runs imputed-SNP methods on an imputed sample. Retrospective tests use `variance`.
pub fn run_imputed_test(
    method: Method,
    sample: &ImputedSample,
    model: GeneticModel,
    variance: RetroVariance,
) -> Result<TestResult> {
    match method {
        Method::ProspectiveImputed => prospective_imputed_test(&sample.posteriors, &sample.phenotypes, model),
        Method::RetrospectiveImputed => {
            retrospective_imputed_test(&sample.posteriors, &sample.phenotypes, model, variance)
        }
        Method::Hotelling => hotelling_t2_test(&sample.typed, &sample.phenotypes),
        other => Err(Error::ContractViolation(format!(
            "{other} is not an imputed-SNP method"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::CountsTable;
    use crate::snp_tests::{prospective_score_test, retrospective_score_test};

    fn two_locus_panel() -> ReferencePanel {
        ReferencePanel::new(
            vec!["A".into(), "T".into()],
            1,
            vec![vec![0, 0], vec![0, 1], vec![1, 1]],
            vec![0.5, 0.3, 0.2],
        )
        .unwrap()
    }

    #[test]
    fn panel_validation() {
        assert!(ReferencePanel::new(vec!["A".into(), "T".into()], 1, vec![vec![0, 0]], vec![0.9]).is_err());
        assert!(ReferencePanel::new(vec!["A".into(), "T".into()], 2, vec![vec![0, 0]], vec![1.0]).is_err());
        assert!(ReferencePanel::new(vec!["A".into(), "T".into()], 1, vec![vec![0, 2]], vec![1.0]).is_err());
    }

    #[test]
    fn posterior_by_hand() {
        // typed A = 0: pairs from {00, 01} -> T counts 0,1,1,2 with weights .25,.15,.15,.09
        let p = genotype_posterior(&two_locus_panel(), &[0]).unwrap();
        let z = 0.64;
        assert!((p.probs[0] - 0.25 / z).abs() < 1e-15);
        assert!((p.probs[1] - 0.30 / z).abs() < 1e-15);
        assert!((p.probs[2] - 0.09 / z).abs() < 1e-15);
        // A = 2 only from 11 + 11
        assert_eq!(
            genotype_posterior(&two_locus_panel(), &[2]).unwrap().probs,
            [0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn inconsistent_genotype() {
        let panel = ReferencePanel::new(
            vec!["A".into(), "T".into(), "B".into()],
            1,
            vec![vec![0, 0, 0], vec![1, 1, 0]],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(matches!(
            genotype_posterior(&panel, &[0, 1]),
            Err(Error::InconsistentGenotype(_))
        ));
    }

    #[test]
    fn allele_freq_examples() {
        let all2 = vec![GenotypePosterior::point_mass(2); 5];
        assert_eq!(imputed_allele_freq(&all2).unwrap(), 1.0);
        let uni = vec![GenotypePosterior { probs: [1.0 / 3.0; 3] }; 4];
        assert!((imputed_allele_freq(&uni).unwrap() - 0.5).abs() < 1e-15);
        assert!(imputed_allele_freq(&[]).is_err());
    }

    #[test]
    fn constant_posteriors_give_zero_score() {
        let post = vec![GenotypePosterior { probs: [0.2, 0.5, 0.3] }; 10];
        let d = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        assert!(matches!(
            prospective_imputed_test(&post, &d, GeneticModel::Additive),
            Err(Error::NotTestable(_))
        ));
    }

    #[test]
    fn point_masses_reduce_to_typed_tests() {
        let t = CountsTable::new([120, 60, 20], [90, 80, 30]);
        let mut post = Vec::new();
        let mut d = Vec::new();
        for dd in 0..2u8 {
            for g in 0..3u8 {
                for _ in 0..t.n[dd as usize][g as usize] {
                    post.push(GenotypePosterior::point_mass(g));
                    d.push(dd);
                }
            }
        }
        for m in GeneticModel::ALL {
            let a = prospective_imputed_test(&post, &d, m).unwrap();
            let b = prospective_score_test(&t, m).unwrap();
            assert!((a.statistic - b.statistic).abs() < 1e-10 * b.statistic.max(1.0));
            let a = retrospective_imputed_test(&post, &d, m, RetroVariance::Pooled).unwrap();
            let b = retrospective_score_test(&t, m).unwrap();
            assert!((a.statistic - b.statistic).abs() < 1e-10 * b.statistic.max(1.0));
        }
    }

    #[test]
    fn hotelling_single_locus_is_trend_test() {
        let t = CountsTable::new([120, 60, 20], [90, 80, 30]);
        let mut typed = Vec::new();
        let mut d = Vec::new();
        for dd in 0..2u8 {
            for g in 0..3u8 {
                for _ in 0..t.n[dd as usize][g as usize] {
                    typed.push(vec![g]);
                    d.push(dd);
                }
            }
        }
        let h = hotelling_t2_test(&typed, &d).unwrap();
        let p = prospective_score_test(&t, GeneticModel::Additive).unwrap();
        assert!((h.statistic - p.statistic).abs() < 1e-10 * p.statistic);
        assert_eq!(h.df, 1);

        let dup: Vec<Vec<u8>> = typed.iter().map(|r| vec![r[0], r[0]]).collect();
        let h2 = hotelling_t2_test(&dup, &d).unwrap();
        assert_eq!(h2.df, 1);
        assert!((h2.statistic - h.statistic).abs() < 1e-8 * h.statistic);
    }
}
