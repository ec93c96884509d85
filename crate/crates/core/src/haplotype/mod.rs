//! Haplotype-effect estimation when phase is unobserved.
//!
//! Two retrospective likelihoods are available. The model-based one assumes
//! haplotype-environment independence and Hardy-Weinberg equilibrium for the
//! whole diplotype distribution; the model-free one uses those assumptions only
//! to resolve phase within a genotype, and estimates haplotype frequencies from
//! controls. Both use the rare-disease form of the likelihood. An
//! empirical-Bayes combination adapts between them.

mod fit;
mod likelihood;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

pub use fit::{
    bootstrap_haplotype_joint, control_haplotype_frequencies, eb_combine, em_haplotype_frequencies, fit_free,
    fit_model, haplotype_joint_covariance, FitMethod, HaplotypeFit,
};
pub use likelihood::{loglik_free, loglik_model, HaplotypeLikelihood};

use crate::error::{Error, Result};
use crate::genotype::{GenotypeDataset, MISSING};

/// Unordered pair of haplotype indices, stored with `a ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Diplotype {
    pub a: usize,
    pub b: usize,
}

impl Diplotype {
    pub fn new(a: usize, b: usize) -> Self {
        Self {
            a: a.min(b),
            b: a.max(b),
        }
    }

    pub fn is_homozygous(&self) -> bool {
        self.a == self.b
    }

    /// Copies of haplotype `k` carried.
    pub fn copies(&self, k: usize) -> u8 {
        u8::from(self.a == k) + u8::from(self.b == k)
    }
}

/// All `2^L` haplotypes over `L` biallelic loci, in binary order.
pub fn all_haplotypes(n_loci: usize) -> Result<Vec<Vec<u8>>> {
    if n_loci == 0 || n_loci > 16 {
        return Err(Error::ContractViolation(format!(
            "cannot enumerate haplotypes over {n_loci} loci"
        )));
    }
    Ok((0..1usize << n_loci)
        .map(|code| (0..n_loci).map(|j| ((code >> (n_loci - 1 - j)) & 1) as u8).collect())
        .collect())
}

fn index_universe(universe: &[Vec<u8>]) -> HashMap<&[u8], usize> {
    universe.iter().enumerate().map(|(k, h)| (h.as_slice(), k)).collect()
}

fn enumerate_indexed(genotype: &[u8], universe: &[Vec<u8>], index: &HashMap<&[u8], usize>) -> Vec<Diplotype> {
    if genotype.iter().any(|&g| g > 2) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut complement = vec![0u8; genotype.len()];
    for (a, h) in universe.iter().enumerate() {
        if h.len() != genotype.len() {
            continue;
        }
        let mut ok = true;
        for j in 0..h.len() {
            match genotype[j].checked_sub(h[j]) {
                Some(c) if c <= 1 => complement[j] = c,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if let Some(&b) = index.get(complement.as_slice()) {
            if a <= b {
                out.push(Diplotype::new(a, b));
            }
        }
    }
    out
}

/// Unordered haplotype pairs from `universe` whose allele sums equal `genotype`.
pub fn enumerate_diplotypes(genotype: &[u8], universe: &[Vec<u8>]) -> Vec<Diplotype> {
    enumerate_indexed(genotype, universe, &index_universe(universe))
}

/// Hardy-Weinberg diplotype probability: `θ_a²` or `2θ_aθ_b`.
pub fn diplotype_prior(pair: Diplotype, theta: &[f64]) -> f64 {
    if pair.is_homozygous() {
        theta[pair.a] * theta[pair.a]
    } else {
        2.0 * theta[pair.a] * theta[pair.b]
    }
}

/// `q_free(pair | G, θ)`: the prior restricted to diplotypes consistent with `genotype`.
pub fn conditional_diplotype_prob(
    pair: Diplotype,
    genotype: &[u8],
    universe: &[Vec<u8>],
    theta: &[f64],
) -> Result<f64> {
    if theta.len() != universe.len() {
        return Err(Error::ContractViolation("one frequency per haplotype required".into()));
    }
    let set = enumerate_diplotypes(genotype, universe);
    let total: f64 = set.iter().map(|&d| diplotype_prior(d, theta)).sum();
    if total <= 0.0 {
        return Err(Error::InconsistentGenotype(format!("{genotype:?}")));
    }
    Ok(if set.contains(&pair) {
        diplotype_prior(pair, theta) / total
    } else {
        0.0
    })
}

/// How copies of the target haplotype enter the risk model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HaplotypeMode {
    Additive,
    Dominant,
    Recessive,
}

impl HaplotypeMode {
    pub fn code(self, copies: u8) -> f64 {
        match self {
            HaplotypeMode::Additive => copies as f64,
            HaplotypeMode::Dominant => f64::from(u8::from(copies >= 1)),
            HaplotypeMode::Recessive => f64::from(u8::from(copies == 2)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HaplotypeMode::Additive => "additive",
            HaplotypeMode::Dominant => "dominant",
            HaplotypeMode::Recessive => "recessive",
        }
    }
}

impl fmt::Display for HaplotypeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HaplotypeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "additive" => Ok(Self::Additive),
            "dominant" => Ok(Self::Dominant),
            "recessive" => Ok(Self::Recessive),
            other => Err(Error::Domain(format!("unknown haplotype mode {other:?}"))),
        }
    }
}

/// Environmental terms in the risk model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EnvironmentTerm {
    #[default]
    None,
    Main,
    /// Main effect plus a target-haplotype by environment interaction.
    Interaction,
}

/// `m(h, E, β) = β_h c(h) + β_E E + β_hE c(h) E`, with `c(h)` the coded copies of the target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RiskModelSpec {
    pub target: Vec<u8>,
    pub mode: HaplotypeMode,
    pub environment: EnvironmentTerm,
}

impl RiskModelSpec {
    pub fn new(target: Vec<u8>, mode: HaplotypeMode) -> Self {
        Self {
            target,
            mode,
            environment: EnvironmentTerm::None,
        }
    }

    pub fn with_environment(mut self, term: EnvironmentTerm) -> Self {
        self.environment = term;
        self
    }

    pub fn n_beta(&self) -> usize {
        match self.environment {
            EnvironmentTerm::None => 1,
            EnvironmentTerm::Main => 2,
            EnvironmentTerm::Interaction => 3,
        }
    }

    pub fn beta_names(&self) -> Vec<&'static str> {
        ["haplotype", "environment", "interaction"][..self.n_beta()].to_vec()
    }

    pub(crate) fn design(&self, copies: u8, env: f64) -> [f64; 3] {
        let c = self.mode.code(copies);
        [c, env, c * env]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct GroupKey {
    pub d: u8,
    pub genotype: Vec<u8>,
    pub env_bits: u64,
}

/// Subjects sharing disease status, genotype and environment.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Group {
    pub key: GroupKey,
    pub w: f64,
    pub env: f64,
    pub diplos: Vec<Diplotype>,
}

impl Group {
    pub fn d(&self) -> u8 {
        self.key.d
    }
}

/// Genotype data prepared for haplotype likelihoods: subjects grouped by
/// `(D, G, E)` with their consistent diplotypes over a haplotype universe.
#[derive(Debug, Clone, PartialEq)]
pub struct HaplotypeData {
    haplotypes: Vec<Vec<u8>>,
    pub(crate) groups: Vec<Group>,
    has_env: bool,
    excluded_missing: usize,
    excluded_inconsistent: usize,
}

impl HaplotypeData {
    /// Uses every locus of `data`. Without an explicit universe all `2^L`
    /// haplotypes are admissible. Subjects with missing calls or with no
    /// consistent diplotype are excluded and counted.
    pub fn from_dataset(data: &GenotypeDataset, universe: Option<Vec<Vec<u8>>>) -> Result<Self> {
        let n_loci = data.n_loci();
        let universe = match universe {
            Some(u) => u,
            None => all_haplotypes(n_loci)?,
        };
        if universe.is_empty() {
            return Err(Error::ContractViolation("empty haplotype universe".into()));
        }
        let mut seen = HashMap::new();
        for (k, h) in universe.iter().enumerate() {
            if h.len() != n_loci || h.iter().any(|&a| a > 1) {
                return Err(Error::ContractViolation(format!(
                    "haplotype {k} is not a 0/1 vector over {n_loci} loci"
                )));
            }
            if seen.insert(h.clone(), k).is_some() {
                return Err(Error::ContractViolation(format!("duplicate haplotype {h:?}")));
            }
        }
        let env = data.environment();
        let mut counts: BTreeMap<GroupKey, f64> = BTreeMap::new();
        let mut excluded_missing = 0;
        for i in 0..data.n_subjects() {
            let genotype = data.subject(i);
            if genotype.contains(&MISSING) {
                excluded_missing += 1;
                continue;
            }
            let e = env.map_or(0.0, |e| e[i]);
            let key = GroupKey {
                d: data.phenotypes()[i],
                genotype,
                env_bits: e.to_bits(),
            };
            *counts.entry(key).or_insert(0.0) += 1.0;
        }
        let index = index_universe(&universe);
        let mut groups = Vec::new();
        let mut excluded_inconsistent = 0;
        for (key, w) in counts {
            let diplos = enumerate_indexed(&key.genotype, &universe, &index);
            if diplos.is_empty() {
                excluded_inconsistent += w as usize;
                continue;
            }
            let env = f64::from_bits(key.env_bits);
            groups.push(Group { key, w, env, diplos });
        }
        let out = Self {
            haplotypes: universe,
            groups,
            has_env: env.is_some(),
            excluded_missing,
            excluded_inconsistent,
        };
        out.check_strata()?;
        Ok(out)
    }

    fn check_strata(&self) -> Result<()> {
        if self.n_cases() == 0.0 || self.n_controls() == 0.0 {
            return Err(Error::ContractViolation(
                "haplotype data needs cases and controls".into(),
            ));
        }
        Ok(())
    }

    /// Keeps only the listed haplotypes (in the given order).
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let mut map = vec![usize::MAX; self.haplotypes.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut groups = Vec::new();
        let mut excluded = self.excluded_inconsistent;
        for g in &self.groups {
            let diplos: Vec<Diplotype> = g
                .diplos
                .iter()
                .filter(|d| map[d.a] != usize::MAX && map[d.b] != usize::MAX)
                .map(|d| Diplotype::new(map[d.a], map[d.b]))
                .collect();
            if diplos.is_empty() {
                excluded += g.w as usize;
            } else {
                groups.push(Group { diplos, ..g.clone() });
            }
        }
        let out = Self {
            haplotypes: keep.iter().map(|&k| self.haplotypes[k].clone()).collect(),
            groups,
            has_env: self.has_env,
            excluded_missing: self.excluded_missing,
            excluded_inconsistent: excluded,
        };
        out.check_strata()?;
        Ok(out)
    }

    pub fn haplotypes(&self) -> &[Vec<u8>] {
        &self.haplotypes
    }

    pub fn has_environment(&self) -> bool {
        self.has_env
    }

    pub fn n_cases(&self) -> f64 {
        self.groups.iter().filter(|g| g.d() == 1).map(|g| g.w).sum()
    }

    pub fn n_controls(&self) -> f64 {
        self.groups.iter().filter(|g| g.d() == 0).map(|g| g.w).sum()
    }

    pub fn excluded_missing(&self) -> usize {
        self.excluded_missing
    }

    pub fn excluded_inconsistent(&self) -> usize {
        self.excluded_inconsistent
    }

    /// Whether every included subject has exactly one consistent diplotype.
    pub fn phase_known(&self) -> bool {
        self.groups.iter().all(|g| g.diplos.len() == 1)
    }

    pub fn target_index(&self, target: &[u8]) -> Option<usize> {
        self.haplotypes.iter().position(|h| h == target)
    }
}
