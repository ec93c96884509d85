//! Data generators for the simulation designs and the experiment runners
//! built on them.

mod experiment;
mod scenario;

pub use experiment::{
    rank_experiment, run_power_experiment, run_snp_experiment, PowerReport, PowerRow, RankExperiment, RankOutcome,
    Rate, ScenarioReplicate, SnpExperiment, SnpExperimentReport,
};
pub use scenario::ScenarioSpec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;

use crate::error::{Error, Result};
use crate::genotype::{hwe_genotype_probs, CountsTable, GeneticModel, GenotypeDataset};
use crate::haplotype::Diplotype;

/// Independent generator for replicate `r` of a run seeded with `seed`.
pub fn substream(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Draws multinomial counts by sequential binomials.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let k = probs.len();
    let mut out = vec![0u64; k];
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    for g in 0..k.saturating_sub(1) {
        if left == 0 || mass <= 0.0 {
            break;
        }
        let p = (probs[g] / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
        out[g] = draw;
        left -= draw;
        mass -= probs[g];
    }
    if let Some(last) = out.last_mut() {
        *last += left;
    }
    out
}

/// Population genotype probabilities with fixation index `zeta`.
pub fn fixation_genotype_probs(f: f64, zeta: f64) -> Result<[f64; 3]> {
    check_zeta(zeta)?;
    let h = hwe_genotype_probs(f)?;
    let x = zeta * f * (1.0 - f);
    Ok([h[0] + x, h[1] - 2.0 * x, h[2] + x])
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::Domain(format!("fixation index must lie in [0, 1), got {zeta}")));
    }
    Ok(())
}

/// Case genotype probabilities `p₀ψ/Σp₀ψ` with `ψ_g = exp{βᵀm(g)}`.
pub fn case_genotype_probs(control: &[f64; 3], model: GeneticModel, beta: &[f64]) -> Result<[f64; 3]> {
    if beta.len() != model.dim() {
        return Err(Error::ContractViolation(format!(
            "{model} coding needs {} coefficients",
            model.dim()
        )));
    }
    let mut p = [0.0; 3];
    for g in 0..3u8 {
        let m = model.code(g);
        let lp: f64 = (0..model.dim()).map(|j| beta[j] * m[j]).sum();
        p[g as usize] = control[g as usize] * lp.exp();
    }
    let total: f64 = p.iter().sum();
    Ok(p.map(|v| v / total))
}

/// Controls from `Multinomial(N₀, HWE(f))`, cases from the tilted law.
pub fn simulate_single_snp<R: Rng + ?Sized>(
    f: f64,
    model: GeneticModel,
    beta: &[f64],
    n_cases: u64,
    n_controls: u64,
    rng: &mut R,
) -> Result<CountsTable> {
    simulate_single_snp_with(&hwe_genotype_probs(f)?, model, beta, n_cases, n_controls, rng)
}

/// As [`simulate_single_snp`] with arbitrary control genotype probabilities.
pub fn simulate_single_snp_with<R: Rng + ?Sized>(
    control: &[f64; 3],
    model: GeneticModel,
    beta: &[f64],
    n_cases: u64,
    n_controls: u64,
    rng: &mut R,
) -> Result<CountsTable> {
    let case = case_genotype_probs(control, model, beta)?;
    let c0 = multinomial(n_controls, control, rng);
    let c1 = multinomial(n_cases, &case, rng);
    Ok(CountsTable::new([c0[0], c0[1], c0[2]], [c1[0], c1[1], c1[2]]))
}

/// Ordered-pair diplotype law: `(1−ζ)θ_aθ_b` off the diagonal and
/// `ζθ_a + (1−ζ)θ_a²` on it.
pub fn diplotype_law(theta: &[f64], zeta: f64) -> Result<Vec<((usize, usize), f64)>> {
    check_zeta(zeta)?;
    let theta = crate::imputation::normalize_simplex(theta.to_vec())?;
    let mut out = Vec::with_capacity(theta.len() * theta.len());
    for a in 0..theta.len() {
        for b in 0..theta.len() {
            let p = if a == b {
                zeta * theta[a] + (1.0 - zeta) * theta[a] * theta[a]
            } else {
                (1.0 - zeta) * theta[a] * theta[b]
            };
            out.push(((a, b), p));
        }
    }
    Ok(out)
}

/// Sampler for the ordered-pair law: with probability `ζ` one haplotype is
/// drawn and doubled, otherwise two are drawn independently.
#[derive(Debug, Clone)]
pub struct DiplotypeSampler {
    index: WeightedIndex<f64>,
    zeta: f64,
}

impl DiplotypeSampler {
    pub fn new(theta: &[f64], zeta: f64) -> Result<Self> {
        check_zeta(zeta)?;
        let theta = crate::imputation::normalize_simplex(theta.to_vec())?;
        let index = WeightedIndex::new(&theta).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(Self { index, zeta })
    }

    /// Ordered pair of haplotype indices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let a = self.index.sample(rng);
        if self.zeta > 0.0 && rng.random::<f64>() < self.zeta {
            (a, a)
        } else {
            (a, self.index.sample(rng))
        }
    }
}

/// `n` diplotypes from the fixation-index law, reported unordered.
pub fn simulate_diplotypes<R: Rng + ?Sized>(theta: &[f64], zeta: f64, n: usize, rng: &mut R) -> Result<Vec<Diplotype>> {
    let s = DiplotypeSampler::new(theta, zeta)?;
    Ok((0..n)
        .map(|_| {
            let (a, b) = s.sample(rng);
            Diplotype::new(a, b)
        })
        .collect())
}

/// Case-control data whose susceptibility-locus genotypes follow the tilted
/// law, with each subject's full profile copied from a random panel control of
/// the same locus genotype. `panel[i]` is the genotype row of control `i`.
#[allow(clippy::too_many_arguments)]
pub fn gwas_resample<R: Rng + ?Sized>(
    panel: &[Vec<u8>],
    locus_ids: &[String],
    locus: usize,
    f: f64,
    model: GeneticModel,
    beta: &[f64],
    n_cases: u64,
    n_controls: u64,
    rng: &mut R,
) -> Result<GenotypeDataset> {
    if panel.is_empty() {
        return Err(Error::ContractViolation("empty control panel".into()));
    }
    if locus >= locus_ids.len() || panel.iter().any(|r| r.len() != locus_ids.len()) {
        return Err(Error::ContractViolation(
            "panel rows do not match the locus list".into(),
        ));
    }
    let mut strata: [Vec<usize>; 3] = Default::default();
    for (i, row) in panel.iter().enumerate() {
        if let Some(s) = strata.get_mut(row[locus] as usize) {
            s.push(i);
        }
    }
    if let Some(g) = (0..3).find(|&g| strata[g].is_empty()) {
        return Err(Error::StratumEmpty(g as u8));
    }
    let table = simulate_single_snp(f, model, beta, n_cases, n_controls, rng)?;
    let n = (n_cases + n_controls) as usize;
    let mut cols = vec![Vec::with_capacity(n); locus_ids.len()];
    let mut phen = Vec::with_capacity(n);
    for d in [1u8, 0] {
        for g in 0..3 {
            for _ in 0..table.n[d as usize][g] {
                let pick = strata[g][rng.random_range(0..strata[g].len())];
                for (col, &v) in cols.iter_mut().zip(&panel[pick]) {
                    col.push(v);
                }
                phen.push(d);
            }
        }
    }
    let ids = (1..=n).map(|i| format!("s{i}")).collect();
    GenotypeDataset::new(ids, phen, locus_ids.to_vec(), cols)
}

/// One draw from a haplotype scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    /// Genotypes at the typed loci only.
    pub typed: GenotypeDataset,
    /// Effect-allele copies at the untyped locus, by subject.
    pub truth: Vec<u8>,
    /// Draws needed to fill both strata.
    pub draws: u64,
}

/// Draws diplotypes from the generating frequencies (with `ζ`), assigns
/// disease by the logistic model on the untyped genotype, and accrues until
/// both strata are full.
pub fn simulate_haplotype_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<ScenarioSample> {
    spec.validate()?;
    let panel = &spec.generating;
    let sampler = DiplotypeSampler::new(panel.freqs(), spec.zeta)?;
    let typed_idx = panel.typed_indices();
    let risk: [f64; 3] = std::array::from_fn(|g| {
        let m = spec.mode.code(g as u8)[0];
        1.0 / (1.0 + (-(spec.alpha + spec.beta * m)).exp())
    });
    let carries: Vec<u8> = (0..panel.haplotypes().len())
        .map(|h| u8::from(panel.carries_effect(h)))
        .collect();
    let (n1, n0) = (spec.n_cases, spec.n_controls);
    let mut cols = vec![Vec::with_capacity(n1 + n0); typed_idx.len()];
    let mut phen = Vec::with_capacity(n1 + n0);
    let mut truth = Vec::with_capacity(n1 + n0);
    let (mut cases, mut controls, mut draws) = (0usize, 0usize, 0u64);
    while cases < n1 || controls < n0 {
        if draws >= spec.draw_budget {
            return Err(Error::SimulationStall { draws, cases, controls });
        }
        draws += 1;
        let (a, b) = sampler.sample(rng);
        let g = carries[a] + carries[b];
        let d = u8::from(rng.random::<f64>() < risk[g as usize]);
        if (d == 1 && cases >= n1) || (d == 0 && controls >= n0) {
            continue;
        }
        if d == 1 {
            cases += 1;
        } else {
            controls += 1;
        }
        let (ha, hb) = (&panel.haplotypes()[a], &panel.haplotypes()[b]);
        for (col, &j) in cols.iter_mut().zip(&typed_idx) {
            col.push(ha[j] + hb[j]);
        }
        phen.push(d);
        truth.push(g);
    }
    let ids = (1..=phen.len()).map(|i| format!("s{i}")).collect();
    let typed = GenotypeDataset::new(ids, phen, panel.typed_ids(), cols)?;
    Ok(ScenarioSample { typed, truth, draws })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_cases_share_control_law() {
        let p = case_genotype_probs(&[0.49, 0.42, 0.09], GeneticModel::Additive, &[0.0]).unwrap();
        for (a, b) in p.iter().zip([0.49, 0.42, 0.09]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn recessive_case_probability() {
        let f: f64 = 0.4;
        let h = hwe_genotype_probs(f).unwrap();
        let p = case_genotype_probs(&h, GeneticModel::Recessive, &[3f64.ln()]).unwrap();
        let want = 3.0 * f * f / (1.0 - f * f + 3.0 * f * f);
        assert!((p[2] - want).abs() < 1e-12);
        assert!((want - 0.48 / 1.32).abs() < 1e-12);
    }

    #[test]
    fn diplotype_law_sums_to_one() {
        for zeta in [0.0, 0.05, 0.5, 0.99] {
            let law = diplotype_law(&[0.1, 0.2, 0.3, 0.4], zeta).unwrap();
            assert!((law.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(diplotype_law(&[1.0], 1.0).is_err());
    }

    #[test]
    fn fixation_probs_sum_to_one() {
        let p = fixation_genotype_probs(0.3, 0.05).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[2] > 0.09);
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, 3).random();
        let b: u64 = substream(7, 3).random();
        let c: u64 = substream(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gwas_resample_deterministic_profiles() {
        let panel = vec![vec![0, 5 % 3, 1], vec![1, 0, 0], vec![2, 1, 2]];
        let ids: Vec<String> = ["L", "X", "Y"].iter().map(|s| s.to_string()).collect();
        let mut rng = substream(1, 0);
        let ds = gwas_resample(&panel, &ids, 0, 0.3, GeneticModel::Additive, &[0.5], 50, 60, &mut rng).unwrap();
        for i in 0..ds.n_subjects() {
            let row = ds.subject(i);
            assert_eq!(row, panel[row[0] as usize]);
        }
        let short = vec![vec![0, 0, 0], vec![1, 0, 0]];
        assert!(matches!(
            gwas_resample(&short, &ids, 0, 0.3, GeneticModel::Additive, &[0.5], 5, 5, &mut rng),
            Err(Error::StratumEmpty(2))
        ));
    }
}
