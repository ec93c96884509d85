mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use retroscan::haplotype::{FitMethod, HaplotypeMode};
use retroscan::snp_tests::RetroVariance;
use retroscan::{GeneticModel, Method};

const THREADS_ENV: &str = "RETROSCAN_THREADS";

/// Case-control association scans for typed SNPs, imputed SNPs and haplotypes.
#[derive(Debug, Parser)]
#[command(name = "retroscan", version)]
struct Cli {
    /// Worker threads (defaults to available parallelism; RETROSCAN_THREADS overrides).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test every locus of a genotype file with typed-SNP methods.
    Scan(ScanArgs),
    /// Test an untyped SNP through reference-panel imputation.
    ImputeTest(ImputeArgs),
    /// Fit haplotype risk models to phase-unknown genotypes.
    Haplo(HaploArgs),
    /// Draw one case-control dataset from a haplotype scenario.
    Simulate(SimulateArgs),
    /// Size or power of imputed-SNP tests over simulated replicates.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Genotype TSV.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated typed-SNP methods.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "prospective,retrospective,eb")]
    methods: Vec<Method>,
    #[arg(long, value_parser = parse_coding, default_value = "codominant")]
    coding: GeneticModel,
    /// Level used for the significant-locus counts in the summary.
    #[arg(long, value_parser = parse_alpha, default_value = "0.05")]
    alpha: f64,
    /// Results TSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Calibration table path (written to stderr when absent).
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImputeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Reference panel TSV; the untyped locus is marked with a trailing `*`.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "prospective-imputed,retrospective-imputed,hotelling")]
    methods: Vec<Method>,
    #[arg(long, value_parser = parse_coding, default_value = "additive")]
    coding: GeneticModel,
    /// Variance of the retrospective imputed score.
    #[arg(long, value_parser = parse_variance, default_value = "sandwich")]
    variance: RetroVariance,
    #[arg(long, value_parser = parse_alpha, default_value = "0.05")]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EnvironmentArg {
    None,
    Main,
    Interaction,
}

#[derive(Debug, Args)]
struct HaploArgs {
    #[arg(long)]
    input: PathBuf,
    /// Target haplotype as a 0/1 string over the loci of the input file.
    #[arg(long)]
    target: String,
    #[arg(long, value_parser = parse_mode, default_value = "additive")]
    mode: HaplotypeMode,
    #[arg(long, value_enum, default_value = "none")]
    environment: EnvironmentArg,
    /// Comma-separated fits: free, model, eb.
    #[arg(long, value_delimiter = ',', value_parser = parse_fit, default_value = "free,model,eb")]
    methods: Vec<FitMethod>,
    /// Bootstrap resamples for the empirical-Bayes covariance (0 = influence sandwich).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Scenario selection shared by `simulate` and `power`.
#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario TOML; takes precedence over --scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin scenario name.
    #[arg(long, default_value = "scenario1")]
    scenario: String,
    #[arg(long, value_parser = parse_coding)]
    mode: Option<GeneticModel>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    controls: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    beta: Option<f64>,
    /// Replicate index; replicate r of `power` uses the same stream.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Typed genotype TSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the true untyped genotypes (default path: <out>.truth.tsv).
    #[arg(long, num_args = 0..=1)]
    emit_truth: Option<Option<PathBuf>>,
    /// Also write the imputation reference panel.
    #[arg(long)]
    panel_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated effect sizes; one block of rows per value.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Significance level of each test.
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "prospective-imputed,retrospective-imputed,hotelling")]
    methods: Vec<Method>,
    #[arg(long, value_parser = parse_variance)]
    variance: Option<RetroVariance>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.trim().parse().map_err(|e: retroscan::Error| e.to_string())
}

fn parse_coding(s: &str) -> Result<GeneticModel, String> {
    s.parse().map_err(|e: retroscan::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<HaplotypeMode, String> {
    s.parse().map_err(|e: retroscan::Error| e.to_string())
}

fn parse_variance(s: &str) -> Result<RetroVariance, String> {
    s.parse().map_err(|e: retroscan::Error| e.to_string())
}

fn parse_fit(s: &str) -> Result<FitMethod, String> {
    [FitMethod::Free, FitMethod::Model, FitMethod::EmpiricalBayes]
        .into_iter()
        .find(|m| m.name() == s.trim())
        .ok_or_else(|| format!("unknown haplotype fit '{s}' (known: free, model, eb)"))
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(a) if a > 0.0 && a < 1.0 => Ok(a),
        _ => Err(format!("alpha must be a number in (0, 1), got '{s}'")),
    }
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{THREADS_ENV}={v:?} is not a thread count"))?;
            Ok(Some(n))
        }
        _ => Ok(flag),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Scan(a) => commands::scan(a),
        Command::ImputeTest(a) => commands::impute_test(a),
        Command::Haplo(a) => commands::haplo(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Power(a) => commands::power(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
