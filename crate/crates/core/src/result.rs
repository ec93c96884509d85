use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::chisq_pvalue;

/// Which test produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Prospective,
    Retrospective,
    EmpiricalBayes,
    ProspectiveWald,
    RetrospectiveWald,
    EbWald,
    ProspectiveImputed,
    RetrospectiveImputed,
    Hotelling,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Prospective,
        Method::Retrospective,
        Method::EmpiricalBayes,
        Method::ProspectiveWald,
        Method::RetrospectiveWald,
        Method::EbWald,
        Method::ProspectiveImputed,
        Method::RetrospectiveImputed,
        Method::Hotelling,
    ];

    /// Methods that operate on a single typed SNP.
    pub const TYPED: [Method; 6] = [
        Method::Prospective,
        Method::Retrospective,
        Method::EmpiricalBayes,
        Method::ProspectiveWald,
        Method::RetrospectiveWald,
        Method::EbWald,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Prospective => "prospective",
            Method::Retrospective => "retrospective",
            Method::EmpiricalBayes => "eb",
            Method::ProspectiveWald => "prospective-wald",
            Method::RetrospectiveWald => "retrospective-wald",
            Method::EbWald => "eb-wald",
            Method::ProspectiveImputed => "prospective-imputed",
            Method::RetrospectiveImputed => "retrospective-imputed",
            Method::Hotelling => "hotelling",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Domain(format!(
                "unknown method '{s}' (known: {})",
                Method::ALL.map(Method::name).join(", ")
            ))
        })
    }
}

/// Outcome of a chi-square referred association test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Nuisance estimates such as `f_hat`, `tau_hat`, `eb_weight`.
    pub nuisance: BTreeMap<String, f64>,
    /// Set when an indefinite variance estimate had to be projected onto the PSD cone.
    pub psd_projected: bool,
}

impl TestResult {
    pub fn new(method: Method, statistic: f64, df: usize) -> Result<Self> {
        let statistic = statistic.max(0.0);
        Ok(Self {
            method,
            statistic,
            df,
            p_value: chisq_pvalue(statistic, df)?,
            nuisance: BTreeMap::new(),
            psd_projected: false,
        })
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.nuisance.insert(key.to_string(), value);
        self
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}
