use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use retroscan::haplotype::{
    bootstrap_haplotype_joint, eb_combine, fit_free, fit_model, haplotype_joint_covariance, EnvironmentTerm, FitMethod,
    HaplotypeData, HaplotypeFit, RiskModelSpec,
};
use retroscan::imputation::{impute_dataset, run_imputed_test};
use retroscan::io::{
    format_calibration, format_genotypes, format_haplotype_report, format_panel, format_scan, format_truth,
    parse_genotypes, parse_panel, ScanRecord,
};
use retroscan::scan::{scan_dataset, ScanSummary};
use retroscan::simulate::{run_power_experiment, simulate_haplotype_scenario, substream, PowerReport, ScenarioSpec};
use retroscan::Method;

use crate::{EnvironmentArg, HaploArgs, ImputeArgs, PowerArgs, ScanArgs, ScenarioArgs, SimulateArgs};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_or_stdout(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn significant_counts(records: &[ScanRecord], methods: &[Method], alpha: f64) -> String {
    methods
        .iter()
        .map(|&m| {
            let n = records
                .iter()
                .filter(|r| r.method == m && r.p_value.is_some_and(|p| p < alpha))
                .count();
            format!("{m}={n}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn summary_line(records: &[ScanRecord]) -> String {
    let s = ScanSummary::from_records(records);
    format!(
        "ok={} not_testable={} degenerate={} failed={}",
        s.ok, s.not_testable, s.degenerate, s.failed
    )
}

pub fn scan(a: ScanArgs) -> Result<()> {
    let data = parse_genotypes(&read(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
    let records = scan_dataset(&data, &a.methods, a.coding)?;
    write_or_stdout(a.out.as_deref(), &format_scan(&records))?;
    let calibration = format_calibration(&records, &a.methods);
    match &a.calibration {
        Some(p) => fs::write(p, &calibration).with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{calibration}"),
    }
    eprintln!(
        "scanned {} loci x {} methods ({} coding): {}; p < {}: {}",
        data.n_loci(),
        a.methods.len(),
        a.coding,
        summary_line(&records),
        a.alpha,
        significant_counts(&records, &a.methods, a.alpha)
    );
    Ok(())
}

pub fn impute_test(a: ImputeArgs) -> Result<()> {
    let data = parse_genotypes(&read(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
    let panel = parse_panel(&read(&a.panel)?)
        .with_context(|| format!("parsing {}", a.panel.display()))?
        .panel;
    let sample = impute_dataset(&panel, &data)?;
    let records: Vec<ScanRecord> = a
        .methods
        .iter()
        .map(|&m| {
            if !matches!(m, Method::ProspectiveImputed | Method::RetrospectiveImputed | Method::Hotelling) {
                bail!("{m} is not an imputed-SNP method (choose from prospective-imputed, retrospective-imputed, hotelling)");
            }
            let r = run_imputed_test(m, &sample, a.coding, a.variance);
            Ok(ScanRecord::from_result(panel.untyped_id(), m, a.coding, &r))
        })
        .collect::<Result<_>>()?;
    write_or_stdout(a.out.as_deref(), &format_scan(&records))?;
    eprintln!(
        "imputed {} from {} typed loci: {} subjects used, {} excluded for missing calls, {} inconsistent with the panel; {}; p < {}: {}",
        panel.untyped_id(),
        panel.typed_ids().len(),
        sample.phenotypes.len(),
        sample.excluded_missing,
        sample.excluded_inconsistent,
        summary_line(&records),
        a.alpha,
        significant_counts(&records, &a.methods, a.alpha)
    );
    Ok(())
}

fn parse_target(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => bail!("target haplotype allele {other:?} is not 0 or 1"),
        })
        .collect()
}

pub fn haplo(a: HaploArgs) -> Result<()> {
    let data = parse_genotypes(&read(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
    let target = parse_target(&a.target)?;
    if target.len() != data.n_loci() {
        bail!(
            "target haplotype has {} alleles but the input has {} loci",
            target.len(),
            data.n_loci()
        );
    }
    let term = match a.environment {
        EnvironmentArg::None => EnvironmentTerm::None,
        EnvironmentArg::Main => EnvironmentTerm::Main,
        EnvironmentArg::Interaction => EnvironmentTerm::Interaction,
    };
    let spec = RiskModelSpec::new(target, a.mode).with_environment(term);
    let hdata = HaplotypeData::from_dataset(&data, None)?;
    let wants = |m: FitMethod| a.methods.contains(&m);
    let need_free = wants(FitMethod::Free) || wants(FitMethod::EmpiricalBayes);
    let need_model = wants(FitMethod::Model) || wants(FitMethod::EmpiricalBayes);
    let free = need_free.then(|| fit_free(&hdata, &spec)).transpose()?;
    let model = need_model.then(|| fit_model(&hdata, &spec)).transpose()?;
    let eb = match (wants(FitMethod::EmpiricalBayes), &free, &model) {
        (true, Some(f), Some(m)) => {
            let joint = if a.bootstrap > 0 {
                let mut rng = substream(a.seed, 0);
                let (joint, used) = bootstrap_haplotype_joint(&hdata, &spec, a.bootstrap, &mut rng)?;
                eprintln!("bootstrap: {used} of {} resamples usable", a.bootstrap);
                joint
            } else {
                haplotype_joint_covariance(f, m)?
            };
            Some(eb_combine(f, m, &joint)?)
        }
        _ => None,
    };
    let fits: Vec<&HaplotypeFit> = a
        .methods
        .iter()
        .filter_map(|m| match m {
            FitMethod::Free => free.as_ref(),
            FitMethod::Model => model.as_ref(),
            FitMethod::EmpiricalBayes => eb.as_ref(),
        })
        .collect();
    write_or_stdout(a.out.as_deref(), &format_haplotype_report(&fits))?;
    for f in &fits {
        if !f.converged || f.boundary {
            eprintln!(
                "warning: {} fit converged={} boundary={}",
                f.method.name(),
                f.converged,
                f.boundary
            );
        }
    }
    eprintln!(
        "{} cases, {} controls; excluded {} with missing calls, {} inconsistent",
        hdata.n_cases(),
        hdata.n_controls(),
        hdata.excluded_missing(),
        hdata.excluded_inconsistent()
    );
    Ok(())
}

fn load_scenario(a: &ScenarioArgs) -> Result<ScenarioSpec> {
    let mut spec = match &a.config {
        Some(p) => ScenarioSpec::from_toml(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => ScenarioSpec::builtin(&a.scenario)?,
    };
    if let Some(m) = a.mode {
        spec.mode = m;
    }
    if let Some(z) = a.zeta {
        spec.zeta = z;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.cases {
        spec.n_cases = n;
    }
    if let Some(n) = a.controls {
        spec.n_controls = n;
    }
    Ok(spec)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut spec = load_scenario(&a.scenario)?;
    if let Some(b) = a.beta {
        spec.beta = b;
    }
    spec.validate()?;
    let mut rng = substream(spec.seed, a.replicate);
    let sample = simulate_haplotype_scenario(&spec, &mut rng)?;
    fs::write(&a.out, format_genotypes(&sample.typed)).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.emit_truth {
        let path = p.clone().unwrap_or_else(|| sidecar(&a.out, ".truth.tsv"));
        fs::write(&path, format_truth(sample.typed.subject_ids(), &sample.truth))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(p) = &a.panel_out {
        fs::write(p, format_panel(&spec.reference, Some(&spec.generating)))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!(
        "{}: {} cases, {} controls from {} draws",
        spec.name,
        sample.typed.n_cases(),
        sample.typed.n_controls(),
        sample.draws
    );
    Ok(())
}

fn pretty(report: &PowerReport) -> String {
    let mut out = String::new();
    for r in &report.rows {
        let truth = r
            .truth
            .map_or(String::new(), |t| format!(" ({:.1})", 100.0 * t.proportion()));
        out.push_str(&format!(
            "{} {} beta={} zeta={} {}: {} {:.1}{truth}\n",
            r.scenario,
            r.mode,
            r.beta,
            r.zeta,
            r.kind(),
            r.method,
            100.0 * r.imputed.proportion()
        ));
    }
    out
}

pub fn power(a: PowerArgs) -> Result<()> {
    let mut spec = load_scenario(&a.scenario)?;
    if let Some(n) = a.replicates {
        spec.replicates = n;
    }
    if let Some(al) = a.alpha {
        spec.alpha_level = al;
    }
    if let Some(v) = a.variance {
        spec.retro_variance = v;
    }
    let betas = if a.beta.is_empty() {
        vec![spec.beta]
    } else {
        a.beta.clone()
    };
    let mut report = PowerReport::default();
    for b in betas {
        let mut s = spec.clone();
        s.beta = b;
        report.extend(run_power_experiment(&s, &a.methods)?);
    }
    write_or_stdout(a.out.as_deref(), &report.to_tsv())?;
    eprint!("{}", pretty(&report));
    Ok(())
}
