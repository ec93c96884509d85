//! Case-control association analysis for typed SNPs, imputed SNPs and
//! phase-ambiguous haplotypes.
//!
//! The crate contrasts the standard prospective (logistic) treatment of
//! case-control data with retrospective likelihoods that exploit Hardy-Weinberg
//! equilibrium, and with empirical-Bayes procedures that adapt between the two.

pub mod error;
pub mod genotype;
pub mod haplotype;
pub mod imputation;
pub mod io;
pub mod numeric;
pub mod optim;
pub mod result;
pub mod scan;
pub mod simulate;
pub mod snp_tests;

pub use error::{Error, Result};
pub use genotype::{CountsTable, GeneticModel, GenotypeDataset};
pub use result::{Method, TestResult};
