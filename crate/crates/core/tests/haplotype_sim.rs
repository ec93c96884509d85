//! Simulation checks of the haplotype estimators on data drawn from a known
//! risk model.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use rayon::prelude::*;
use retroscan::genotype::GenotypeDataset;
use retroscan::haplotype::{
    conditional_diplotype_prob, eb_combine, enumerate_diplotypes, fit_free, fit_model, haplotype_joint_covariance,
    Diplotype, HaplotypeData, HaplotypeMode, RiskModelSpec,
};
use retroscan::simulate::{substream, DiplotypeSampler};

// five-locus haplotypes and population frequencies
const HAPS: [&str; 6] = ["10000", "01010", "11010", "11101", "01101", "11001"];
const FREQS: [f64; 6] = [0.158, 0.400, 0.050, 0.358, 0.022, 0.012];
const TARGET: usize = 0;

fn haps() -> Vec<Vec<u8>> {
    HAPS.iter().map(|h| h.bytes().map(|b| b - b'0').collect()).collect()
}

/// Controls from the population diplotype law (rare disease), cases from the
/// same law tilted by `exp(beta * copies of the target)`.
fn draw(beta: f64, zeta: f64, n_cases: usize, n_controls: usize, seed: u64, rep: u64) -> GenotypeDataset {
    let haps = haps();
    let sampler = DiplotypeSampler::new(&FREQS, zeta).unwrap();
    let mut rng = substream(seed, rep);
    let top = (2.0 * beta).exp().max(1.0);
    let mut pairs = Vec::with_capacity(n_cases + n_controls);
    while pairs.len() < n_cases {
        let (a, b) = sampler.sample(&mut rng);
        let copies = usize::from(a == TARGET) + usize::from(b == TARGET);
        if rng.random::<f64>() * top < (beta * copies as f64).exp() {
            pairs.push((a, b));
        }
    }
    for _ in 0..n_controls {
        pairs.push(sampler.sample(&mut rng));
    }
    let n = pairs.len();
    let geno = (0..HAPS[0].len())
        .map(|j| pairs.iter().map(|&(a, b)| haps[a][j] + haps[b][j]).collect())
        .collect();
    GenotypeDataset::new(
        (0..n).map(|i| format!("s{i}")).collect(),
        (0..n).map(|i| u8::from(i < n_cases)).collect(),
        (0..HAPS[0].len()).map(|j| format!("A{j}")).collect(),
        geno,
    )
    .unwrap()
}

fn spec() -> RiskModelSpec {
    RiskModelSpec::new(haps()[TARGET].clone(), HaplotypeMode::Additive)
}

struct Fits {
    free: f64,
    model: f64,
    eb: f64,
    weight: f64,
}

fn fit_all(data: &GenotypeDataset) -> Option<Fits> {
    let hd = HaplotypeData::from_dataset(data, None).ok()?;
    let free = fit_free(&hd, &spec()).ok()?;
    let model = fit_model(&hd, &spec()).ok()?;
    let eb = eb_combine(&free, &model, &haplotype_joint_covariance(&free, &model).ok()?).ok()?;
    Some(Fits {
        free: free.beta[0],
        model: model.beta[0],
        eb: eb.beta[0],
        weight: eb.weights.as_ref()?[0],
    })
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn replicate_fits(beta: f64, zeta: f64, n: usize, reps: u64, seed: u64) -> Vec<Fits> {
    (0..reps)
        .into_par_iter()
        .filter_map(|r| fit_all(&draw(beta, zeta, n, n, seed, r)))
        .collect()
}

#[test]
fn model_fit_recovers_effect() {
    let data = draw(0.3, 0.0, 1000, 1000, 31, 0);
    let hd = HaplotypeData::from_dataset(&data, None).unwrap();
    let fit = fit_model(&hd, &spec()).unwrap();
    let se = fit.standard_errors()[0];
    assert!(fit.converged);
    assert!((fit.beta[0] - 0.3).abs() < 3.0 * se, "beta {} se {se}", fit.beta[0]);
    let target = fit.haplotypes.iter().position(|h| *h == haps()[TARGET]).unwrap();
    assert!((fit.theta[target] - FREQS[TARGET]).abs() < 0.02);
}

#[test]
fn free_fit_robust_to_hwe_violation_while_model_is_biased() {
    let reps = 500;
    let fits = replicate_fits(0.3, 0.1, 500, reps, 32);
    assert!(fits.len() as u64 >= reps - 5);
    let free: Vec<f64> = fits.iter().map(|f| f.free).collect();
    let model: Vec<f64> = fits.iter().map(|f| f.model).collect();
    let (mf, sf) = mean_sd(&free);
    let (mm, sm) = mean_sd(&model);
    let n = fits.len() as f64;
    assert!((mf - 0.3).abs() < 3.0 * sf / n.sqrt(), "free mean {mf}, sd {sf}");
    assert!((mm - 0.3).abs() > 3.0 * sm / n.sqrt(), "model mean {mm}, sd {sm}");
}

#[test]
fn eb_weight_tracks_model_validity() {
    // with d/sqrt(v) asymptotically standard normal, E[W] = E[1 / (1 + Z^2)]
    let h = 1e-3;
    let limit: f64 = (-8000..=8000)
        .map(|k| {
            let z = f64::from(k) * h;
            h * (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() / (1.0 + z * z)
        })
        .sum();
    let weights = |zeta: f64, n: usize, seed: u64| {
        let w: Vec<f64> = replicate_fits(0.3, zeta, n, 200, seed)
            .iter()
            .map(|f| f.weight)
            .collect();
        let (m, sd) = mean_sd(&w);
        (m, sd / (w.len() as f64).sqrt())
    };
    // under the model the weight keeps the same distribution as N grows
    for (n, seed) in [(500, 41), (2000, 42)] {
        let (m, se) = weights(0.0, n, seed);
        assert!(
            (m - limit).abs() < 4.0 * se,
            "N={n}: mean W {m} (SE {se}), limit {limit}"
        );
    }
    // under violation the bias grows relative to its standard error
    let (small, _) = weights(0.1, 500, 43);
    let (large, se) = weights(0.1, 2000, 44);
    assert!(
        large < small && large < limit - 4.0 * se,
        "mean W {small} at N=500, {large} at N=2000"
    );
}

#[test]
fn eb_lies_between_components() {
    for f in replicate_fits(0.3, 0.0, 400, 20, 51) {
        let (lo, hi) = if f.free < f.model {
            (f.free, f.model)
        } else {
            (f.model, f.free)
        };
        assert!(f.eb >= lo - 1e-12 && f.eb <= hi + 1e-12);
        assert_abs_diff_eq!(f.eb, f.weight * f.model + (1.0 - f.weight) * f.free, epsilon = 1e-10);
    }
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn diplotype_probabilities_normalize(theta in simplex(6), g in prop::collection::vec(0u8..3, 5)) {
        let universe = haps();
        let pairs = enumerate_diplotypes(&g, &universe);
        let probs: Vec<f64> = pairs.iter().filter_map(|&p| conditional_diplotype_prob(p, &g, &universe, &theta).ok()).collect();
        if !probs.is_empty() {
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relabelling_haplotypes_leaves_probabilities_unchanged(theta in simplex(6), shift in 1usize..6) {
        let universe = haps();
        let perm: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
        let u2: Vec<Vec<u8>> = perm.iter().map(|&i| universe[i].clone()).collect();
        let t2: Vec<f64> = perm.iter().map(|&i| theta[i]).collect();
        let g = vec![1, 1, 1, 1, 1];
        let key = |pairs: Vec<Diplotype>, u: &[Vec<u8>], t: &[f64]| {
            let mut v: Vec<(Vec<u8>, f64)> = pairs
                .into_iter()
                .map(|p| {
                    let (a, b) = (u[p.a].clone(), u[p.b].clone());
                    (if a < b { [a, b].concat() } else { [b, a].concat() }, conditional_diplotype_prob(p, &g, u, t).unwrap())
                })
                .collect();
            v.sort_by(|x, y| x.0.cmp(&y.0));
            v
        };
        let a = key(enumerate_diplotypes(&g, &universe), &universe, &theta);
        let b = key(enumerate_diplotypes(&g, &u2), &u2, &t2);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.0, &y.0);
            prop_assert!((x.1 - y.1).abs() < 1e-12);
        }
    }
}
