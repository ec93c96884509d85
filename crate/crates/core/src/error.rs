use thiserror::Error;

/// Errors raised by the association engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no non-missing genotypes at locus {0}")]
    EmptyLocus(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate allele frequency {0}")]
    DegenerateFrequency(f64),
    #[error("not testable: {0}")]
    NotTestable(String),
    #[error("optimizer failed to converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    Convergence { iterations: usize, gradient_norm: f64 },
    #[error("separation: {0}")]
    Separation(String),
    #[error("genotype inconsistent with the haplotype universe: {0}")]
    InconsistentGenotype(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("no control in the resampling panel carries genotype {0} at the susceptibility locus")]
    StratumEmpty(u8),
    #[error("simulation stalled after {draws} draws ({cases} cases, {controls} controls accrued)")]
    SimulationStall { draws: u64, cases: usize, controls: usize },
    #[error("not identifiable: {0}")]
    NotIdentifiable(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
