use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use retroscan::genotype::CountsTable;
use retroscan::io::{parse_haplotype_report, parse_panel, parse_scan, parse_truth, Status};
use retroscan::simulate::PowerReport;
use retroscan::snp_tests::prospective_score_test;
use retroscan::{GeneticModel, Method};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_retroscan"));
    c.env_remove("RETROSCAN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

const TOY: &str = "subject\tphenotype\trs1\trs2\trs3
a\t1\t0\t0\t2
b\t1\t1\t0\t1
c\t1\t2\t0\t1
d\t1\t1\t0\tNA
e\t0\t0\t0\t0
f\t0\t0\t0\t1
g\t0\t1\t0\t0
h\t0\t0\t0\t2
";

fn write_toy(dir: &TempDir) -> String {
    let p = path(dir, "toy.tsv");
    fs::write(&p, TOY).unwrap();
    p
}

#[test]
fn scan_emits_one_row_per_locus_and_method() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(&dir);
    let out = path(&dir, "scan.tsv");
    let res = run(&[
        "scan",
        "--input",
        &input,
        "--methods",
        "prospective,retrospective,eb",
        "--coding",
        "additive",
        "--out",
        &out,
    ]);
    ok(&res);
    let records = parse_scan(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(records.len(), 9);
    assert_eq!(records[0].method, Method::Prospective);
    assert_eq!(records[8].locus_id, "rs3");
}

#[test]
fn monomorphic_locus_is_flagged_and_scan_continues() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(&dir);
    let res = run(&["scan", "--input", &input, "--methods", "prospective,eb"]);
    ok(&res);
    let records = parse_scan(&String::from_utf8(res.stdout).unwrap()).unwrap();
    let rs2: Vec<_> = records.iter().filter(|r| r.locus_id == "rs2").collect();
    assert_eq!(rs2.len(), 2);
    assert!(rs2.iter().all(|r| r.status != Status::Ok && r.p_value.is_none()));
    assert!(records
        .iter()
        .filter(|r| r.locus_id == "rs3")
        .all(|r| r.status == Status::Ok));
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("ok=4 not_testable=1 degenerate=1"), "{err}");
}

#[test]
fn calibration_table_has_one_row_per_threshold() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(&dir);
    let cal = path(&dir, "cal.tsv");
    ok(&run(&["scan", "--input", &input, "--calibration", &cal]));
    let text = fs::read_to_string(&cal).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha\tprospective\tretrospective\teb");
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("1e-6\t"));
}

#[test]
fn malformed_input_reports_line_number() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "bad.tsv");
    fs::write(&p, "subject\tphenotype\trs1\na\t1\t0\nb\t0\t7\n").unwrap();
    let res = run(&["scan", "--input", &p]);
    assert!(!res.status.success());
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_method_lists_registry() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(&dir);
    let res = run(&["scan", "--input", &input, "--methods", "prospective,bogus"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8(res.stderr).unwrap();
    for m in Method::ALL {
        assert!(err.contains(m.name()), "{err}");
    }
}

#[test]
fn thread_env_overrides_flag() {
    let dir = TempDir::new().unwrap();
    let input = write_toy(&dir);
    let res = bin()
        .args(["scan", "--threads", "2", "--input", &input])
        .env("RETROSCAN_THREADS", "many")
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("RETROSCAN_THREADS"));
}

fn random_genotype_file(dir: &TempDir, n_loci: usize, n_subjects: usize) -> String {
    // deterministic pseudo-random genotypes from a linear congruential sequence
    let mut state: u64 = 12345;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    let mut text = String::from("subject\tphenotype");
    for j in 0..n_loci {
        text.push_str(&format!("\tsnp{j}"));
    }
    text.push('\n');
    let freqs: Vec<f64> = (0..n_loci).map(|_| 0.05 + 0.45 * next()).collect();
    for i in 0..n_subjects {
        text.push_str(&format!("s{i}\t{}", u8::from(i % 2 == 0)));
        for f in &freqs {
            let g = u8::from(next() < *f) + u8::from(next() < *f);
            text.push_str(&format!("\t{g}"));
        }
        text.push('\n');
    }
    let p = path(dir, "null.tsv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn scan_output_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let input = random_genotype_file(&dir, 300, 200);
    let methods = "prospective,retrospective,eb,prospective-wald,retrospective-wald,eb-wald";
    let outputs: Vec<Vec<u8>> = ["1", "4"]
        .iter()
        .map(|t| {
            let res = bin()
                .args(["scan", "--input", &input, "--methods", methods])
                .env("RETROSCAN_THREADS", t)
                .output()
                .unwrap();
            ok(&res);
            res.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(
        parse_scan(&String::from_utf8(outputs[0].clone()).unwrap())
            .unwrap()
            .len(),
        1800
    );
}

#[test]
fn null_scan_calibration_is_near_nominal() {
    let dir = TempDir::new().unwrap();
    let input = random_genotype_file(&dir, 2000, 400);
    let cal = path(&dir, "cal.tsv");
    let res = run(&[
        "scan",
        "--input",
        &input,
        "--methods",
        "prospective",
        "--calibration",
        &cal,
    ]);
    ok(&res);
    let text = fs::read_to_string(&cal).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "5e-2");
    let frac: f64 = row[1].parse().unwrap();
    // 2000 null loci: binomial SE about 0.005
    assert!((frac - 0.05).abs() < 0.02, "{frac}");
}

#[test]
fn power_output_is_identical_across_thread_counts_and_parses() {
    let outputs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let res = bin()
                .args([
                    "power",
                    "--scenario",
                    "scenario2",
                    "--mode",
                    "recessive",
                    "--beta",
                    "0,0.5",
                ])
                .args([
                    "--replicates",
                    "20",
                    "--seed",
                    "7",
                    "--cases",
                    "200",
                    "--controls",
                    "200",
                ])
                .env("RETROSCAN_THREADS", t)
                .output()
                .unwrap();
            ok(&res);
            res.stdout
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    let report = PowerReport::from_tsv(&String::from_utf8(outputs[0].clone()).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(report.rows[0].kind(), "size");
    assert_eq!(report.rows[3].kind(), "power");
    assert!(report.rows.iter().all(|r| r.imputed.tested + r.imputed.failures == 20));
}

#[test]
fn power_rejects_typed_methods() {
    let res = run(&["power", "--methods", "prospective", "--replicates", "2"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("prospective-imputed"));
}

#[test]
fn simulate_emits_truth_and_panel_that_round_trip() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "sim.tsv");
    let panel = path(&dir, "panel.tsv");
    let res = run(&[
        "simulate",
        "--scenario",
        "scenario1",
        "--mode",
        "recessive",
        "--beta",
        "0.6",
        "--cases",
        "300",
        "--controls",
        "300",
        "--seed",
        "3",
        "--out",
        &out,
        "--emit-truth",
        "--panel-out",
        &panel,
    ]);
    ok(&res);
    let geno = retroscan::io::parse_genotypes(&fs::read_to_string(&out).unwrap()).unwrap();
    let truth = parse_truth(&fs::read_to_string(format!("{out}.truth.tsv")).unwrap()).unwrap();
    assert_eq!(geno.n_subjects(), 600);
    assert_eq!(truth.len(), 600);
    assert!(truth.iter().zip(geno.subject_ids()).all(|((id, _), g)| id == g));
    let pf = parse_panel(&fs::read_to_string(&panel).unwrap()).unwrap();
    assert_eq!(pf.panel.untyped_id(), "T");
    assert_eq!(pf.panel.typed_ids(), geno.locus_ids());
    assert!(pf.generating.is_some());

    // the typed loci determine T in this scenario, so the imputed test equals the true-genotype test
    let res = run(&[
        "impute-test",
        "--input",
        &out,
        "--panel",
        &panel,
        "--coding",
        "recessive",
        "--methods",
        "prospective-imputed",
    ]);
    ok(&res);
    let rec = parse_scan(&String::from_utf8(res.stdout).unwrap()).unwrap();
    let mut cells = [[0u64; 3]; 2];
    for ((_, g), &d) in truth.iter().zip(geno.phenotypes()) {
        cells[d as usize][*g as usize] += 1;
    }
    let counts = CountsTable::new(cells[0], cells[1]);
    let oracle = prospective_score_test(&counts, GeneticModel::Recessive).unwrap();
    assert!((rec[0].statistic.unwrap() - oracle.statistic).abs() < 1e-10 * oracle.statistic.max(1.0));
}

#[test]
fn simulate_is_deterministic_given_seed() {
    let dir = TempDir::new().unwrap();
    let read = |name: &str, threads: &str| {
        let out = path(&dir, name);
        let res = bin()
            .args([
                "simulate",
                "--scenario",
                "scenario2",
                "--seed",
                "11",
                "--cases",
                "100",
                "--controls",
                "100",
                "--out",
                &out,
            ])
            .env("RETROSCAN_THREADS", threads)
            .output()
            .unwrap();
        ok(&res);
        fs::read(&out).unwrap()
    };
    assert_eq!(read("a.tsv", "1"), read("b.tsv", "2"));
}

/// Logistic regression of `d` on a single covariate by Newton's method.
fn logistic_slope(x: &[f64], d: &[u8]) -> f64 {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &di) in x.iter().zip(d) {
            let p = 1.0 / (1.0 + (-(a + b * xi)).exp());
            let r = f64::from(di) - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        let da = (h11 * g0 - h01 * g1) / det;
        let db = (h00 * g1 - h01 * g0) / det;
        a += da;
        b += db;
        if da.abs() + db.abs() < 1e-13 {
            break;
        }
    }
    b
}

fn phase_known_file(dir: &TempDir) -> (String, Vec<f64>, Vec<u8>) {
    // two loci, never both heterozygous; copies of haplotype 11 are then known
    let cells: [((u8, u8), usize, usize); 8] = [
        ((0, 0), 40, 60),
        ((0, 1), 30, 45),
        ((1, 0), 35, 40),
        ((0, 2), 10, 12),
        ((2, 0), 9, 11),
        ((2, 1), 25, 14),
        ((1, 2), 22, 12),
        ((2, 2), 18, 6),
    ];
    let mut text = String::from("subject\tphenotype\tL1\tL2\n");
    let (mut x, mut d) = (Vec::new(), Vec::new());
    let mut id = 0;
    for ((g1, g2), cases, controls) in cells {
        let copies = match (g1, g2) {
            (2, 2) => 2.0,
            (2, 1) | (1, 2) => 1.0,
            _ => 0.0,
        };
        for (status, n) in [(1u8, cases), (0u8, controls)] {
            for _ in 0..n {
                text.push_str(&format!("s{id}\t{status}\t{g1}\t{g2}\n"));
                id += 1;
                x.push(copies);
                d.push(status);
            }
        }
    }
    let p = path(dir, "phase.tsv");
    fs::write(&p, text).unwrap();
    (p, x, d)
}

#[test]
fn haplo_on_phase_known_data_matches_logistic_oracle() {
    let dir = TempDir::new().unwrap();
    let (input, x, d) = phase_known_file(&dir);
    let out = path(&dir, "haplo.tsv");
    ok(&run(&[
        "haplo", "--input", &input, "--target", "11", "--mode", "additive", "--out", &out,
    ]));
    let rows = parse_haplotype_report(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    let oracle = logistic_slope(&x, &d);
    let free = rows.iter().find(|r| r.method == "free").unwrap();
    let model = rows.iter().find(|r| r.method == "model").unwrap();
    let eb = rows.iter().find(|r| r.method == "eb").unwrap();
    assert!((free.estimate - oracle).abs() < 1e-6, "{} vs {oracle}", free.estimate);
    assert!(
        (model.estimate - oracle).abs() < 2.0 * model.se,
        "{} vs {oracle}",
        model.estimate
    );
    let w = eb.weight.unwrap();
    assert!((0.0..=1.0).contains(&w));
    let lo = free.estimate.min(model.estimate) - 1e-12;
    let hi = free.estimate.max(model.estimate) + 1e-12;
    assert!(eb.estimate >= lo && eb.estimate <= hi);
}

#[test]
fn haplo_rejects_target_of_wrong_length() {
    let dir = TempDir::new().unwrap();
    let (input, _, _) = phase_known_file(&dir);
    let res = run(&["haplo", "--input", &input, "--target", "101"]);
    assert!(!res.status.success());
}

#[test]
fn scenario_config_file_drives_simulation() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "scenario.toml");
    fs::write(
        &cfg,
        "panel = \"scenario2\"\nmode = \"dominant\"\nbeta = 0.4\nn_cases = 50\nn_controls = 60\nseed = 5\n",
    )
    .unwrap();
    let out = path(&dir, "sim.tsv");
    ok(&run(&["simulate", "--config", &cfg, "--out", &out]));
    let g = retroscan::io::parse_genotypes(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((g.n_cases(), g.n_controls()), (50, 60));
    assert!(Path::new(&out).exists());
}
