//! Genotype data model, genetic-model codings and Hardy-Weinberg arithmetic.
//!
//! Genotypes are minor-allele counts `0`, `1`, `2`; missing calls are stored as
//! [`MISSING`]. Storage is locus-major so that per-SNP scans read contiguous
//! memory.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Sentinel for a missing genotype call.
pub const MISSING: u8 = u8::MAX;

/// Case-control sample with genotypes over a set of loci.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeDataset {
    subject_ids: Vec<String>,
    phenotypes: Vec<u8>,
    locus_ids: Vec<String>,
    /// `genotypes[locus][subject]`
    genotypes: Vec<Vec<u8>>,
    environment: Option<Vec<f64>>,
}

impl GenotypeDataset {
    /// Builds a dataset from locus-major genotype columns.
    pub fn new(
        subject_ids: Vec<String>,
        phenotypes: Vec<u8>,
        locus_ids: Vec<String>,
        genotypes: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let n = phenotypes.len();
        if subject_ids.len() != n {
            return Err(Error::ContractViolation(format!(
                "{} subject ids for {} phenotypes",
                subject_ids.len(),
                n
            )));
        }
        if locus_ids.len() != genotypes.len() {
            return Err(Error::ContractViolation(format!(
                "{} locus ids for {} genotype columns",
                locus_ids.len(),
                genotypes.len()
            )));
        }
        if let Some(d) = phenotypes.iter().find(|&&d| d > 1) {
            return Err(Error::Domain(format!("phenotype must be 0 or 1, got {d}")));
        }
        let cases = phenotypes.iter().filter(|&&d| d == 1).count();
        if cases == 0 || cases == n {
            return Err(Error::ContractViolation(
                "dataset needs at least one case and one control".into(),
            ));
        }
        for (j, col) in genotypes.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ContractViolation(format!(
                    "locus {} has {} genotypes for {} subjects",
                    locus_ids[j],
                    col.len(),
                    n
                )));
            }
            if let Some(g) = col.iter().find(|&&g| g > 2 && g != MISSING) {
                return Err(Error::Domain(format!("genotype code {g} at locus {}", locus_ids[j])));
            }
        }
        Ok(Self {
            subject_ids,
            phenotypes,
            locus_ids,
            genotypes,
            environment: None,
        })
    }

    /// Attaches a per-subject environmental covariate.
    pub fn with_environment(mut self, env: Vec<f64>) -> Result<Self> {
        if env.len() != self.phenotypes.len() {
            return Err(Error::ContractViolation("environment length mismatch".into()));
        }
        self.environment = Some(env);
        Ok(self)
    }

    pub fn n_subjects(&self) -> usize {
        self.phenotypes.len()
    }

    pub fn n_loci(&self) -> usize {
        self.locus_ids.len()
    }

    pub fn n_cases(&self) -> usize {
        self.phenotypes.iter().filter(|&&d| d == 1).count()
    }

    pub fn n_controls(&self) -> usize {
        self.n_subjects() - self.n_cases()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn phenotypes(&self) -> &[u8] {
        &self.phenotypes
    }

    pub fn locus_ids(&self) -> &[String] {
        &self.locus_ids
    }

    pub fn environment(&self) -> Option<&[f64]> {
        self.environment.as_deref()
    }

    /// Genotype column of one locus.
    pub fn locus(&self, j: usize) -> &[u8] {
        &self.genotypes[j]
    }

    /// Genotypes of one subject across all loci.
    pub fn subject(&self, i: usize) -> Vec<u8> {
        self.genotypes.iter().map(|col| col[i]).collect()
    }

    pub fn locus_index(&self, id: &str) -> Option<usize> {
        self.locus_ids.iter().position(|l| l == id)
    }
}

/// 2 x 3 case-control by genotype contingency table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CountsTable {
    /// `n[d][g]`: subjects with disease status `d` and genotype `g`.
    pub n: [[u64; 3]; 2],
}

impl CountsTable {
    pub fn new(controls: [u64; 3], cases: [u64; 3]) -> Self {
        Self { n: [controls, cases] }
    }

    pub fn controls(&self) -> [u64; 3] {
        self.n[0]
    }

    pub fn cases(&self) -> [u64; 3] {
        self.n[1]
    }

    pub fn n_controls(&self) -> u64 {
        self.n[0].iter().sum()
    }

    pub fn n_cases(&self) -> u64 {
        self.n[1].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.n_cases() + self.n_controls()
    }

    /// Pooled count `n₊g`.
    pub fn marginal(&self, g: usize) -> u64 {
        self.n[0][g] + self.n[1][g]
    }

    pub fn marginals(&self) -> [u64; 3] {
        [self.marginal(0), self.marginal(1), self.marginal(2)]
    }
}

/// Tabulates non-missing genotypes at `locus` by disease status.
pub fn genotype_counts(data: &GenotypeDataset, locus: usize) -> Result<CountsTable> {
    if locus >= data.n_loci() {
        return Err(Error::ContractViolation(format!(
            "locus index {locus} out of range ({} loci)",
            data.n_loci()
        )));
    }
    let mut t = CountsTable::default();
    for (&g, &d) in data.locus(locus).iter().zip(data.phenotypes()) {
        if g != MISSING {
            t.n[d as usize][g as usize] += 1;
        }
    }
    if t.total() == 0 {
        return Err(Error::EmptyLocus(locus));
    }
    Ok(t)
}

/// Genetic coding `m(G)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneticModel {
    Additive,
    Dominant,
    Recessive,
    /// Two indicators ordered as (heterozygote, homozygous variant).
    Codominant,
}

impl GeneticModel {
    pub const ALL: [GeneticModel; 4] = [
        GeneticModel::Additive,
        GeneticModel::Dominant,
        GeneticModel::Recessive,
        GeneticModel::Codominant,
    ];

    pub fn dim(self) -> usize {
        match self {
            GeneticModel::Codominant => 2,
            _ => 1,
        }
    }

    /// Coded value of genotype `g`; only the first [`dim`](Self::dim) entries are used.
    pub fn code(self, g: u8) -> [f64; 2] {
        match self {
            GeneticModel::Additive => [g as f64, 0.0],
            GeneticModel::Dominant => [f64::from(g >= 1), 0.0],
            GeneticModel::Recessive => [f64::from(g == 2), 0.0],
            GeneticModel::Codominant => [f64::from(g == 1), f64::from(g == 2)],
        }
    }

    pub fn code_vec(self, g: u8) -> DVector<f64> {
        DVector::from_row_slice(&self.code(g)[..self.dim()])
    }

    /// `E{m(G)}` for an arbitrary genotype distribution.
    pub fn expect(self, probs: &[f64; 3]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (g, p) in probs.iter().enumerate() {
            let c = self.code(g as u8);
            out[0] += p * c[0];
            out[1] += p * c[1];
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneticModel::Additive => "additive",
            GeneticModel::Dominant => "dominant",
            GeneticModel::Recessive => "recessive",
            GeneticModel::Codominant => "codominant",
        }
    }
}

impl fmt::Display for GeneticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneticModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "additive" | "add" | "trend" => Ok(GeneticModel::Additive),
            "dominant" | "dom" => Ok(GeneticModel::Dominant),
            "recessive" | "rec" => Ok(GeneticModel::Recessive),
            "codominant" | "codom" | "genotypic" | "2df" => Ok(GeneticModel::Codominant),
            other => Err(Error::Domain(format!(
                "unknown genetic model '{other}' (expected additive, dominant, recessive or codominant)"
            ))),
        }
    }
}

/// Maximum-likelihood allele frequency `(n₊₁ + 2n₊₂) / 2N`.
pub fn estimate_allele_freq(counts: &CountsTable) -> Result<f64> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::EmptyLocus(0));
    }
    let m = counts.marginals();
    Ok((m[1] + 2 * m[2]) as f64 / (2 * n) as f64)
}

fn check_freq(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) || f.is_nan() {
        return Err(Error::Domain(format!("allele frequency {f} outside [0, 1]")));
    }
    Ok(())
}

/// HWE genotype probabilities `((1-f)², 2f(1-f), f²)`.
pub fn hwe_genotype_probs(f: f64) -> Result<[f64; 3]> {
    check_freq(f)?;
    Ok([(1.0 - f) * (1.0 - f), 2.0 * f * (1.0 - f), f * f])
}

/// `E_HWE,f{m(G)}`.
pub fn hwe_expected_m(model: GeneticModel, f: f64) -> Result<DVector<f64>> {
    let p = hwe_genotype_probs(f)?;
    Ok(DVector::from_row_slice(&model.expect(&p)[..model.dim()]))
}

/// `C(f) = Σ_g m(g) (g - 2f)/(f(1-f)) p₀g(f)`, the derivative of
/// `E_HWE,f{m(G)}` with respect to `f`.
pub fn c_vector(model: GeneticModel, f: f64) -> Result<DVector<f64>> {
    check_freq(f)?;
    if f <= 0.0 || f >= 1.0 {
        return Err(Error::DegenerateFrequency(f));
    }
    let p = hwe_genotype_probs(f)?;
    let denom = f * (1.0 - f);
    let mut c = DVector::zeros(model.dim());
    for g in 0..3u8 {
        let w = (g as f64 - 2.0 * f) / denom * p[g as usize];
        let code = model.code(g);
        for k in 0..model.dim() {
            c[k] += code[k] * w;
        }
    }
    Ok(c)
}
