use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::GeneticModel;
use crate::imputation::ReferencePanel;
use crate::snp_tests::RetroVariance;

/// A haplotype-panel simulation design. The generating panel drives data
/// generation; the reference panel (same haplotypes, different frequencies)
/// drives imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub generating: ReferencePanel,
    pub reference: ReferencePanel,
    pub mode: GeneticModel,
    pub beta: f64,
    pub alpha: f64,
    pub n_cases: usize,
    pub n_controls: usize,
    pub replicates: usize,
    pub alpha_level: f64,
    pub seed: u64,
    pub zeta: f64,
    pub retro_variance: RetroVariance,
    pub draw_budget: u64,
}

const DEFAULT_BUDGET: u64 = 10_000_000;

struct Builtin {
    loci: &'static [&'static str],
    untyped: usize,
    effect_allele: u8,
    rows: &'static [(&'static str, f64, f64)],
}

// haplotype, generating frequency, reference frequency
const SCENARIO1: Builtin = Builtin {
    loci: &["A1", "T", "A2", "A3", "A4"],
    untyped: 1,
    effect_allele: 0,
    rows: &[
        ("10000", 0.158, 0.058),
        ("01010", 0.400, 0.300),
        ("11010", 0.050, 0.050),
        ("11101", 0.358, 0.558),
        ("01101", 0.022, 0.017),
        ("11001", 0.012, 0.017),
    ],
};

// The untyped locus is the last allele of each haplotype string: only this
// reading gives the stated prediction accuracy R² ≈ 0.39.
const SCENARIO2: Builtin = Builtin {
    loci: &["A1", "A2", "A3", "T"],
    untyped: 3,
    effect_allele: 1,
    rows: &[
        ("0000", 0.088, 0.058),
        ("0011", 0.027, 0.017),
        ("0100", 0.302, 0.342),
        ("0110", 0.008, 0.008),
        ("1010", 0.242, 0.142),
        ("1011", 0.333, 0.433),
    ],
};

fn parse_haplotype(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Domain(format!("haplotype allele {other:?} is not 0 or 1"))),
        })
        .collect()
}

fn build_panels(
    loci: Vec<String>,
    untyped: usize,
    effect_allele: u8,
    haplotypes: Vec<Vec<u8>>,
    generating: Vec<f64>,
    reference: Vec<f64>,
) -> Result<(ReferencePanel, ReferencePanel)> {
    let gen = ReferencePanel::new(loci, untyped, haplotypes, generating)?.with_effect_allele(effect_allele)?;
    let reference = gen.with_freqs(reference)?;
    Ok((gen, reference))
}

impl Builtin {
    fn panels(&self) -> (ReferencePanel, ReferencePanel) {
        build_panels(
            self.loci.iter().map(|s| s.to_string()).collect(),
            self.untyped,
            self.effect_allele,
            self.rows
                .iter()
                .map(|r| parse_haplotype(r.0).expect("builtin haplotype"))
                .collect(),
            self.rows.iter().map(|r| r.1).collect(),
            self.rows.iter().map(|r| r.2).collect(),
        )
        .expect("builtin panel is valid")
    }
}

impl ScenarioSpec {
    fn from_builtin(name: &str, b: &Builtin) -> Self {
        let (generating, reference) = b.panels();
        Self {
            name: name.into(),
            generating,
            reference,
            mode: GeneticModel::Recessive,
            beta: 0.0,
            alpha: -3.0,
            n_cases: 1000,
            n_controls: 1000,
            replicates: 1000,
            alpha_level: 0.01,
            seed: 1,
            zeta: 0.0,
            retro_variance: RetroVariance::Sandwich,
            draw_budget: DEFAULT_BUDGET,
        }
    }

    /// Five-locus panel in which the typed loci determine the untyped genotype.
    /// The effect allele at the untyped locus is the minor allele `0`.
    pub fn scenario1() -> Self {
        Self::from_builtin("scenario1", &SCENARIO1)
    }

    /// Four-locus panel with imperfect prediction of the untyped genotype.
    pub fn scenario2() -> Self {
        Self::from_builtin("scenario2", &SCENARIO2)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "scenario1" => Ok(Self::scenario1()),
            "scenario2" => Ok(Self::scenario2()),
            other => Err(Error::Domain(format!(
                "unknown builtin scenario {other:?} (known: scenario1, scenario2)"
            ))),
        }
    }

    pub fn with_mode(mut self, mode: GeneticModel, beta: f64) -> Self {
        self.mode = mode;
        self.beta = beta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == GeneticModel::Codominant {
            return Err(Error::Domain(
                "scenario mode must be additive, dominant or recessive".into(),
            ));
        }
        if self.n_cases == 0 || self.n_controls == 0 {
            return Err(Error::Domain("scenario needs at least one case and one control".into()));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::Domain(format!(
                "fixation index must lie in [0, 1), got {}",
                self.zeta
            )));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Domain("alpha_level must lie in (0, 1)".into()));
        }
        if !self.beta.is_finite() || !self.alpha.is_finite() {
            return Err(Error::Domain("non-finite regression coefficient".into()));
        }
        if self.generating.haplotypes() != self.reference.haplotypes() {
            return Err(Error::ContractViolation(
                "generating and reference panels differ in haplotypes".into(),
            ));
        }
        Ok(())
    }

    /// Parses a TOML scenario; see [`ScenarioSpec::to_toml`] for the layout.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        raw.into_spec()
    }

    pub fn to_toml(&self) -> String {
        let raw = RawScenario {
            name: Some(self.name.clone()),
            panel: PanelConfig::Explicit(ExplicitPanel {
                loci: self.generating.loci().to_vec(),
                untyped: self.generating.untyped_id().to_string(),
                effect_allele: Some(self.generating.effect_allele()),
                haplotypes: self
                    .generating
                    .haplotypes()
                    .iter()
                    .map(|h| h.iter().map(|a| char::from(b'0' + a)).collect())
                    .collect(),
                frequency: self.generating.freqs().to_vec(),
                reference: Some(self.reference.freqs().to_vec()),
            }),
            mode: self.mode.name().to_string(),
            beta: self.beta,
            alpha: Some(self.alpha),
            n_cases: Some(self.n_cases),
            n_controls: Some(self.n_controls),
            replicates: Some(self.replicates),
            alpha_level: Some(self.alpha_level),
            seed: Some(self.seed),
            zeta: Some(self.zeta),
            retro_variance: Some(self.retro_variance.name().to_string()),
            draw_budget: Some(self.draw_budget),
        };
        toml::to_string(&raw).expect("scenario serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    panel: PanelConfig,
    mode: String,
    beta: f64,
    alpha: Option<f64>,
    n_cases: Option<usize>,
    n_controls: Option<usize>,
    replicates: Option<usize>,
    alpha_level: Option<f64>,
    seed: Option<u64>,
    zeta: Option<f64>,
    retro_variance: Option<String>,
    draw_budget: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PanelConfig {
    Builtin(String),
    Explicit(ExplicitPanel),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitPanel {
    loci: Vec<String>,
    untyped: String,
    effect_allele: Option<u8>,
    haplotypes: Vec<String>,
    frequency: Vec<f64>,
    /// Imputation frequencies; the generating ones when absent.
    reference: Option<Vec<f64>>,
}

impl RawScenario {
    fn into_spec(self) -> Result<ScenarioSpec> {
        let mut spec = match self.panel {
            PanelConfig::Builtin(name) => ScenarioSpec::builtin(&name)?,
            PanelConfig::Explicit(p) => {
                let untyped =
                    p.loci.iter().position(|l| *l == p.untyped).ok_or_else(|| {
                        Error::ContractViolation(format!("untyped locus {} not among loci", p.untyped))
                    })?;
                let haps = p
                    .haplotypes
                    .iter()
                    .map(|h| parse_haplotype(h))
                    .collect::<Result<Vec<_>>>()?;
                let reference = p.reference.unwrap_or_else(|| p.frequency.clone());
                let (generating, reference) = build_panels(
                    p.loci,
                    untyped,
                    p.effect_allele.unwrap_or(1),
                    haps,
                    p.frequency,
                    reference,
                )?;
                let mut s = ScenarioSpec::scenario1();
                s.name = "custom".into();
                s.generating = generating;
                s.reference = reference;
                s
            }
        };
        if let Some(n) = self.name {
            spec.name = n;
        }
        spec.mode = self.mode.parse()?;
        spec.beta = self.beta;
        spec.alpha = self.alpha.unwrap_or(spec.alpha);
        spec.n_cases = self.n_cases.unwrap_or(spec.n_cases);
        spec.n_controls = self.n_controls.unwrap_or(spec.n_controls);
        spec.replicates = self.replicates.unwrap_or(spec.replicates);
        spec.alpha_level = self.alpha_level.unwrap_or(spec.alpha_level);
        spec.seed = self.seed.unwrap_or(spec.seed);
        spec.zeta = self.zeta.unwrap_or(spec.zeta);
        if let Some(v) = self.retro_variance {
            spec.retro_variance = v.parse()?;
        }
        spec.draw_budget = self.draw_budget.unwrap_or(spec.draw_budget);
        spec.validate()?;
        Ok(spec)
    }
}
