//! Tab-separated formats for genotype data, reference panels and reports.
//!
//! Genotype files start with a header `subject  phenotype  [environment]  locus…`
//! followed by one row per subject; genotypes are `0`, `1`, `2` or `NA`.
//! Panel files list one haplotype per row with 0/1 alleles per locus and a
//! `freq` column; the untyped locus is marked by a trailing `*` in the header,
//! an optional `gen_freq` column carries generating frequencies, and a
//! `#effect_allele=0|1` line selects the counted allele at the untyped locus.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::genotype::{GeneticModel, GenotypeDataset, MISSING};
use crate::haplotype::HaplotypeFit;
use crate::imputation::ReferencePanel;
use crate::result::{Method, TestResult};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_genotypes(text: &str) -> Result<GenotypeDataset> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty genotype file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 2 || cols[0] != "subject" || cols[1] != "phenotype" {
        return Err(parse_err(hline, "header must start with 'subject<TAB>phenotype'"));
    }
    let has_env = cols.get(2) == Some(&"environment");
    let first_locus = if has_env { 3 } else { 2 };
    let loci: Vec<String> = cols[first_locus..].iter().map(|s| s.to_string()).collect();
    if loci.is_empty() {
        return Err(parse_err(hline, "no locus columns"));
    }
    let mut ids = Vec::new();
    let mut phen = Vec::new();
    let mut env = Vec::new();
    let mut geno = vec![Vec::new(); loci.len()];
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(parse_err(
                ln,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        ids.push(f[0].to_string());
        phen.push(match f[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(ln, format!("phenotype {other:?} is not 0 or 1"))),
        });
        if has_env {
            env.push(
                f[2].parse::<f64>()
                    .map_err(|_| parse_err(ln, format!("environment {:?} is not a number", f[2])))?,
            );
        }
        for (j, v) in f[first_locus..].iter().enumerate() {
            geno[j].push(match *v {
                "0" => 0,
                "1" => 1,
                "2" => 2,
                "NA" | "." | "-1" => MISSING,
                other => {
                    return Err(parse_err(
                        ln,
                        format!("genotype {other:?} at {} is not 0, 1, 2 or NA", loci[j]),
                    ))
                }
            });
        }
    }
    let data = GenotypeDataset::new(ids, phen, loci, geno)?;
    if has_env {
        data.with_environment(env)
    } else {
        Ok(data)
    }
}

pub fn format_genotypes(data: &GenotypeDataset) -> String {
    let mut out = String::from("subject\tphenotype");
    if data.environment().is_some() {
        out.push_str("\tenvironment");
    }
    for l in data.locus_ids() {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for i in 0..data.n_subjects() {
        out.push_str(&data.subject_ids()[i]);
        let _ = write!(out, "\t{}", data.phenotypes()[i]);
        if let Some(e) = data.environment() {
            let _ = write!(out, "\t{}", e[i]);
        }
        for j in 0..data.n_loci() {
            match data.locus(j)[i] {
                MISSING => out.push_str("\tNA"),
                g => {
                    let _ = write!(out, "\t{g}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// A parsed panel file: the imputation panel plus, when a `gen_freq` column is
/// present, the same haplotypes with generating frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelFile {
    pub panel: ReferencePanel,
    pub generating: Option<ReferencePanel>,
}

pub fn parse_panel(text: &str) -> Result<PanelFile> {
    let mut effect = 1u8;
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = line.trim().strip_prefix("#effect_allele=") {
            effect = match v.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(i + 1, format!("effect allele {other:?} is not 0 or 1"))),
            };
        }
    }
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty panel file"))?;
    let cols: Vec<&str> = header.split('\t').collect();
    let freq_col = cols
        .iter()
        .position(|&c| c == "freq")
        .ok_or_else(|| parse_err(hline, "missing 'freq' column"))?;
    let gen_col = cols.iter().position(|&c| c == "gen_freq");
    let locus_cols: Vec<usize> = (0..cols.len())
        .filter(|&c| c != freq_col && Some(c) != gen_col)
        .collect();
    let marked: Vec<usize> = locus_cols.iter().copied().filter(|&c| cols[c].ends_with('*')).collect();
    if marked.len() != 1 {
        return Err(parse_err(
            hline,
            "exactly one locus must be marked untyped with a trailing '*'",
        ));
    }
    let loci: Vec<String> = locus_cols
        .iter()
        .map(|&c| cols[c].trim_end_matches('*').to_string())
        .collect();
    let untyped = locus_cols
        .iter()
        .position(|&c| c == marked[0])
        .expect("marked column is a locus column");
    let (mut haps, mut freqs, mut gens) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(parse_err(
                ln,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let h = locus_cols
            .iter()
            .map(|&c| match f[c] {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(parse_err(ln, format!("allele {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        haps.push(h);
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(ln, format!("frequency {s:?} is not a number")))
        };
        freqs.push(num(f[freq_col])?);
        if let Some(g) = gen_col {
            gens.push(num(f[g])?);
        }
    }
    let panel = ReferencePanel::new(loci, untyped, haps, freqs)?.with_effect_allele(effect)?;
    let generating = if gen_col.is_some() {
        Some(panel.with_freqs(gens)?)
    } else {
        None
    };
    Ok(PanelFile { panel, generating })
}

pub fn format_panel(panel: &ReferencePanel, generating: Option<&ReferencePanel>) -> String {
    let mut out = format!("#effect_allele={}\n", panel.effect_allele());
    let names: Vec<String> = panel
        .loci()
        .iter()
        .enumerate()
        .map(|(j, l)| {
            if j == panel.untyped_index() {
                format!("{l}*")
            } else {
                l.clone()
            }
        })
        .collect();
    out.push_str(&names.join("\t"));
    out.push_str("\tfreq");
    if generating.is_some() {
        out.push_str("\tgen_freq");
    }
    out.push('\n');
    for (k, h) in panel.haplotypes().iter().enumerate() {
        let alleles: Vec<String> = h.iter().map(|a| a.to_string()).collect();
        let _ = write!(out, "{}\t{}", alleles.join("\t"), panel.freqs()[k]);
        if let Some(g) = generating {
            let _ = write!(out, "\t{}", g.freqs()[k]);
        }
        out.push('\n');
    }
    out
}

/// Outcome class of a per-locus test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotTestable,
    Degenerate,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NotTestable => "not_testable",
            Status::Degenerate => "degenerate",
            Status::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Status::Ok, Status::NotTestable, Status::Degenerate, Status::Failed]
            .into_iter()
            .find(|x| x.name() == s)
    }
}

/// One row of a scan report.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub locus_id: String,
    pub method: Method,
    pub coding: GeneticModel,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
    pub f_hat: Option<f64>,
    pub tau_hat: Option<f64>,
    pub converged: bool,
    pub status: Status,
}

impl ScanRecord {
    pub fn from_result(locus_id: &str, method: Method, coding: GeneticModel, r: &Result<TestResult>) -> Self {
        match r {
            Ok(t) => Self {
                locus_id: locus_id.into(),
                method,
                coding,
                statistic: Some(t.statistic),
                df: Some(t.df),
                p_value: Some(t.p_value),
                f_hat: t.nuisance.get("f_hat").copied(),
                tau_hat: t
                    .nuisance
                    .get("tau_hat")
                    .or_else(|| t.nuisance.get("tau_hat_1"))
                    .copied(),
                converged: true,
                status: Status::Ok,
            },
            Err(e) => Self {
                locus_id: locus_id.into(),
                method,
                coding,
                statistic: None,
                df: None,
                p_value: None,
                f_hat: None,
                tau_hat: None,
                converged: !matches!(e, Error::Convergence { .. }),
                status: match e {
                    Error::NotTestable(_) | Error::EmptyLocus(_) | Error::Separation(_) => Status::NotTestable,
                    Error::DegenerateFrequency(_) => Status::Degenerate,
                    _ => Status::Failed,
                },
            },
        }
    }
}

const SCAN_HEADER: &str = "locus_id\tmethod\tcoding\tstatistic\tdf\tp\tf_hat\ttau_hat\tconverged\tstatus";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn format_scan(records: &[ScanRecord]) -> String {
    let mut out = String::from(SCAN_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.locus_id,
            r.method,
            r.coding,
            opt(r.statistic),
            opt(r.df),
            opt(r.p_value),
            opt(r.f_hat),
            opt(r.tau_hat),
            r.converged,
            r.status.name()
        );
    }
    out
}

pub fn parse_scan(text: &str) -> Result<Vec<ScanRecord>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h == SCAN_HEADER => {}
        Some((ln, _)) => return Err(parse_err(ln, "unexpected scan header")),
        None => return Err(parse_err(1, "empty scan file")),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(parse_err(ln, format!("expected 10 fields, found {}", f.len())));
        }
        let of = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| parse_err(ln, format!("{s:?} is not a number")))
            }
        };
        out.push(ScanRecord {
            locus_id: f[0].to_string(),
            method: f[1].parse().map_err(|e: Error| parse_err(ln, e.to_string()))?,
            coding: f[2].parse().map_err(|e: Error| parse_err(ln, e.to_string()))?,
            statistic: of(f[3])?,
            df: if f[4] == "NA" {
                None
            } else {
                Some(f[4].parse().map_err(|_| parse_err(ln, "bad df"))?)
            },
            p_value: of(f[5])?,
            f_hat: of(f[6])?,
            tau_hat: of(f[7])?,
            converged: f[8].parse().map_err(|_| parse_err(ln, "bad convergence flag"))?,
            status: Status::parse(f[9]).ok_or_else(|| parse_err(ln, format!("unknown status {:?}", f[9])))?,
        });
    }
    Ok(out)
}

/// Significance thresholds of the calibration table.
pub const CALIBRATION_LEVELS: [f64; 6] = [5e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Proportion of tested loci with `p < α`, per level (rows) and method (columns).
pub fn format_calibration(records: &[ScanRecord], methods: &[Method]) -> String {
    let mut out = String::from("alpha");
    for m in methods {
        let _ = write!(out, "\t{m}");
    }
    out.push('\n');
    for &a in &CALIBRATION_LEVELS {
        let _ = write!(out, "{a:.0e}");
        for &m in methods {
            let p: Vec<f64> = records
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| r.p_value)
                .collect();
            let frac = if p.is_empty() {
                f64::NAN
            } else {
                p.iter().filter(|&&x| x < a).count() as f64 / p.len() as f64
            };
            let _ = write!(out, "\t{frac:.3e}");
        }
        out.push('\n');
    }
    out
}

const HAPLO_HEADER: &str = "parameter\testimate\tse\tmethod\tW";

/// One row per coefficient and fit: parameter, estimate, SE, method, EB weight.
pub fn format_haplotype_report(fits: &[&HaplotypeFit]) -> String {
    let mut out = String::from(HAPLO_HEADER);
    out.push('\n');
    for fit in fits {
        let se = fit.standard_errors();
        for (j, name) in fit.spec.beta_names().iter().enumerate() {
            let w = fit.weights.as_ref().map(|w| w[j]);
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}",
                fit.beta[j],
                se[j],
                fit.method.name(),
                opt(w)
            );
        }
    }
    out
}

/// Parsed haplotype report row.
#[derive(Debug, Clone, PartialEq)]
pub struct HaplotypeRecord {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub method: String,
    pub weight: Option<f64>,
}

pub fn parse_haplotype_report(text: &str) -> Result<Vec<HaplotypeRecord>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h == HAPLO_HEADER => {}
        _ => return Err(parse_err(1, "unexpected haplotype report header")),
    }
    lines
        .map(|(ln, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(parse_err(ln, format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(ln, format!("{s:?} is not a number")))
            };
            Ok(HaplotypeRecord {
                parameter: f[0].into(),
                estimate: num(f[1])?,
                se: num(f[2])?,
                method: f[3].into(),
                weight: if f[4] == "NA" { None } else { Some(num(f[4])?) },
            })
        })
        .collect()
}

/// Sidecar with the true untyped genotype per subject.
pub fn format_truth(subject_ids: &[String], truth: &[u8]) -> String {
    let mut out = String::from("subject\ttrue_genotype\n");
    for (id, g) in subject_ids.iter().zip(truth) {
        let _ = writeln!(out, "{id}\t{g}");
    }
    out
}

pub fn parse_truth(text: &str) -> Result<Vec<(String, u8)>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, "subject\ttrue_genotype")) => {}
        _ => return Err(parse_err(1, "unexpected truth header")),
    }
    lines
        .map(|(ln, line)| {
            let (id, g) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(ln, "expected 2 fields"))?;
            let g: u8 = g
                .parse()
                .ok()
                .filter(|&g| g <= 2)
                .ok_or_else(|| parse_err(ln, format!("genotype {g:?}")))?;
            Ok((id.to_string(), g))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genotype_round_trip_with_missing_and_environment() {
        let text = "subject\tphenotype\tenvironment\trs1\trs2\na\t1\t0.5\t0\tNA\nb\t0\t-1\t2\t1\n";
        let d = parse_genotypes(text).unwrap();
        assert_eq!(d.locus(1)[0], MISSING);
        assert_eq!(d.environment().unwrap(), &[0.5, -1.0]);
        assert_eq!(format_genotypes(&d), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "subject\tphenotype\trs1\na\t1\t0\nb\t0\t3\n";
        match parse_genotypes(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = "subject\tphenotype\trs1\na\t1\n";
        assert!(matches!(parse_genotypes(short), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn panel_round_trip() {
        let text = "#effect_allele=0\nA1\tT*\tA2\tfreq\tgen_freq\n1\t0\t0\t0.25\t0.2\n0\t1\t1\t0.75\t0.8\n";
        let p = parse_panel(text).unwrap();
        assert_eq!(p.panel.untyped_id(), "T");
        assert_eq!(p.panel.effect_allele(), 0);
        assert_eq!(p.generating.as_ref().unwrap().freqs(), &[0.2, 0.8]);
        assert_eq!(format_panel(&p.panel, p.generating.as_ref()), text);
        assert!(parse_panel("A1\tT\tfreq\n1\t0\t1\n").is_err());
    }

    #[test]
    fn scan_round_trip() {
        let ok = TestResult::new(Method::Prospective, 3.5, 2)
            .unwrap()
            .with("f_hat", 0.25);
        let recs = vec![
            ScanRecord::from_result("rs1", Method::Prospective, GeneticModel::Codominant, &Ok(ok)),
            ScanRecord::from_result(
                "rs2",
                Method::EmpiricalBayes,
                GeneticModel::Additive,
                &Err(Error::NotTestable("x".into())),
            ),
        ];
        assert_eq!(parse_scan(&format_scan(&recs)).unwrap(), recs);
    }
}
