//! Acceptance checks for the whole library, one line per criterion.
//!
//! Runs without the libtest harness so each verdict is printed as it
//! completes. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 8`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use bnppc::diagnostics::quantile;
use bnppc::dp::{allocation_sweep, crp_log_prior, enumerate_partitions, ConcentrationState, DpConfig};
use bnppc::effects::marginal_effect_point;
use bnppc::gauss::PriorSpec;
use bnppc::io::chain::{write_chain, DrawFormat};
use bnppc::io::dataset::{identity_spec, load_panel, save_panel};
use bnppc::model::category_probabilities;
use bnppc::partition::{
    adjusted_rand_index, binder_expected_loss, first_appearance, posterior_similarity, search_optimal_partition,
};
use bnppc::polya_gamma::{pg_laplace, sample_pg, PgParams};
use bnppc::sampler::{run_mcmc, run_mcmc_seeded, two_stage_fit, Fault, InitPolicy};
use bnppc::sim::{geweke_test, sample_crp, separated_truth, simulate_panel, GewekeSetup, TruthPolicy};
use bnppc::{ClusterState, Dimensions, GlobalCoefficients, PanelData, PanelLabels, SamplerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::digamma;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Verdict;

/// Flat likelihood: no observed periods, so every update samples its prior.
fn empty_panel(n_units: usize) -> PanelData {
    let dims = Dimensions {
        n_units,
        n_periods: 0,
        n_categories: 2,
        n_cluster_covariates: 1,
        n_global_covariates: 0,
    };
    PanelData::new(dims, vec![], vec![], vec![], vec![], PanelLabels::generic(&dims)).unwrap()
}

fn crp_prior_recovery() -> Verdict {
    let data = empty_panel(5);
    let prior = PriorSpec::standard(data.dims());
    let cfg = DpConfig {
        n_aux: 3,
        ..DpConfig::default()
    };
    let conc = ConcentrationState { alpha: 1.0 };
    let theta = GlobalCoefficients::zeros(0, 1);
    let mut state = ClusterState::single_cluster(5, 1, 1);
    let partitions = enumerate_partitions(5);
    let index: HashMap<Vec<usize>, usize> = partitions.iter().cloned().enumerate().map(|(k, p)| (p, k)).collect();
    let mut counts = vec![0usize; partitions.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let sweeps = 200_000;
    for it in 0..sweeps + 1000 {
        allocation_sweep(&data, &mut state, &theta, &conc, &cfg, &prior, &mut rng).unwrap();
        if it >= 1000 {
            counts[index[&first_appearance(&state.assignments)]] += 1;
        }
    }
    let tv: f64 = partitions
        .iter()
        .zip(&counts)
        .map(|(p, &c)| (c as f64 / sweeps as f64 - crp_log_prior(p, 1.0).unwrap().exp()).abs())
        .sum::<f64>()
        / 2.0;
    Verdict::new(
        partitions.len() == 52 && tv < 0.02,
        format!("{} partitions, total variation {tv:.4} (limit 0.02)", partitions.len()),
    )
}

fn prior_cluster_count() -> Verdict {
    let n = 912;
    let (a, b) = (3.0, 2.0);
    // E[M | alpha] = alpha (digamma(alpha + N) - digamma(alpha)), integrated
    // against the Gamma(a, b) density by Simpson's rule.
    let density = |x: f64| b * b * b * x * x * (-b * x).exp() / 2.0;
    let conditional = |x: f64| if x == 0.0 { 1.0 } else { x * (digamma(x + n as f64) - digamma(x)) };
    let (upper, steps) = (60.0, 60_000);
    let h = upper / steps as f64;
    let oracle = (0..=steps)
        .map(|k| {
            let x = k as f64 * h;
            let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            w * density(x) * conditional(x)
        })
        .sum::<f64>()
        * h
        / 3.0;

    let data = empty_panel(n);
    let mut cfg = SamplerConfig::new(data.dims());
    cfg.dp = DpConfig {
        a_alpha: a,
        b_alpha: b,
        n_aux: 3,
    };
    cfg.n_burnin = 500;
    cfg.n_retained = 10_000;
    cfg.seed = 202;
    let chain = run_mcmc_seeded(&data, &cfg).unwrap();
    let mc = chain.draws.iter().map(|d| d.n_clusters() as f64).sum::<f64>() / chain.draws.len() as f64;
    Verdict::new(
        (mc - oracle).abs() <= 1.0,
        format!("Monte Carlo E[M] {mc:.3}, oracle {oracle:.3} (tolerance 1)"),
    )
}

fn pg_moments() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let n = 1_000_000;
    let mut worst_mean: f64 = 0.0;
    let mut worst_laplace: f64 = 0.0;
    for (b, z) in [(1u32, 0.0f64), (1, 2.0), (2, 1.0)] {
        let params = PgParams::new(b, z).unwrap();
        let draws: Vec<f64> = (0..n).map(|_| sample_pg(params, &mut rng).unwrap()).collect();
        let expected = if z == 0.0 { b as f64 / 4.0 } else { b as f64 * (z / 2.0).tanh() / (2.0 * z) };
        worst_mean = worst_mean.max(standard_errors_off(&draws, expected));
        for t in [0.5, 1.0, 2.0] {
            let transformed: Vec<f64> = draws.iter().map(|w| (-t * w).exp()).collect();
            worst_laplace = worst_laplace.max(standard_errors_off(&transformed, pg_laplace(params, t)));
        }
    }
    Verdict::new(
        worst_mean < 3.0 && worst_laplace < 4.0,
        format!("worst mean deviation {worst_mean:.2} se (limit 3), worst Laplace deviation {worst_laplace:.2} se (limit 4)"),
    )
}

fn standard_errors_off(values: &[f64], expected: f64) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean - expected).abs() / (var / n).sqrt()
}

/// Posterior mean and sd of a logistic intercept with a N(0, 1) prior after
/// `s` successes in `n` trials, by quadrature.
fn logistic_posterior(s: f64, n: f64) -> (f64, f64) {
    let grid: Vec<f64> = (0..=40_000).map(|k| -10.0 + k as f64 * 5e-4).collect();
    let log_post: Vec<f64> = grid
        .iter()
        .map(|&x| -0.5 * x * x + s * x - n * (1.0 + x.exp()).ln())
        .collect();
    let top = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_post.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = grid.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = grid.iter().zip(&w).map(|(x, w)| (x - mean).powi(2) * w).sum::<f64>() / total;
    (mean, var.sqrt())
}

fn gaussian_update_oracle() -> Verdict {
    // Two fixed clusters of four units, one period, ten trials per cell:
    // 30 of 40 and 8 of 40 in the first category.
    let dims = Dimensions {
        n_units: 8,
        n_periods: 1,
        n_categories: 2,
        n_cluster_covariates: 1,
        n_global_covariates: 0,
    };
    let successes = [8u32, 7, 8, 7, 2, 3, 1, 2];
    let y: Vec<u32> = successes.iter().flat_map(|&s| [s, 10 - s]).collect();
    let data = PanelData::new(dims, vec![10; 8], y, vec![1.0; 8], vec![], PanelLabels::generic(&dims)).unwrap();
    let mut cfg = SamplerConfig::new(&dims);
    cfg.fixed_partition = Some(vec![0, 0, 0, 0, 1, 1, 1, 1]);
    cfg.n_burnin = 500;
    cfg.n_retained = 40_000;
    cfg.seed = 404;
    let chain = run_mcmc_seeded(&data, &cfg).unwrap();

    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (c, s) in [(0, 30.0), (1, 8.0)] {
        let (mean, sd) = logistic_posterior(s, 40.0);
        let draws: Vec<f64> = chain.draws.iter().map(|d| d.beta_star[c][(0, 0)]).collect();
        let n = draws.len() as f64;
        let m = draws.iter().sum::<f64>() / n;
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let (em, es) = ((m - mean).abs() / mean.abs(), (v.sqrt() - sd).abs() / sd);
        worst = worst.max(em).max(es);
        detail.push(format!("cluster {}: mean {m:.4} vs {mean:.4}, sd {:.4} vs {sd:.4}", c + 1, v.sqrt()));
    }
    Verdict::new(
        worst < 0.02,
        format!("{}; worst relative error {:.2}% (limit 2%)", detail.join("; "), 100.0 * worst),
    )
}

fn geweke_joint_test() -> Verdict {
    let setup = GewekeSetup::default();
    let cfg = SamplerConfig::new(&setup.dims);
    // With 36 statistics a correct sampler still crosses |z| = 4 now and
    // then; the seed is fixed so the verdict is reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clean = geweke_test(&setup, &cfg, &mut rng).unwrap();
    let mut kappa = cfg.clone();
    kappa.fault = Fault::KappaOffset;
    let kappa = geweke_test(&setup, &kappa, &mut rng).unwrap();
    let mut odds = cfg.clone();
    odds.fault = Fault::AlphaOddsDenominator;
    let odds = geweke_test(&setup, &odds, &mut rng).unwrap();
    let worst = |r: &bnppc::sim::GewekeReport| {
        r.statistics
            .iter()
            .max_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
            .map(|s| format!("{} at {:.2}", s.name, s.z))
            .unwrap_or_default()
    };
    Verdict::new(
        clean.statistics.len() >= 30 && clean.max_abs_z() < 4.0 && kappa.max_abs_z() > 10.0 && odds.max_abs_z() > 10.0,
        format!(
            "{} functions, {} samples per side; clean max |z| {:.2} ({}); wrong kappa {:.1}; wrong alpha odds {:.1} ({})",
            clean.statistics.len(),
            setup.n_samples,
            clean.max_abs_z(),
            worst(&clean),
            kappa.max_abs_z(),
            odds.max_abs_z(),
            worst(&odds)
        ),
    )
}

/// Similarity matrix of a noisy posterior around a random partition.
fn noisy_psm(rng: &mut ChaCha8Rng, n: usize) -> bnppc::partition::SimilarityMatrix {
    let alpha = rng.random_range(0.5..3.0);
    let centre = sample_crp(n, alpha, rng);
    let noise = rng.random_range(0.0..0.6);
    let k = centre.iter().max().unwrap() + 2;
    let draws: Vec<Vec<usize>> = (0..rng.random_range(5..60))
        .map(|_| {
            centre
                .iter()
                .map(|&s| if rng.random::<f64>() < noise { rng.random_range(0..k) } else { s })
                .collect()
        })
        .collect();
    posterior_similarity(&draws).unwrap()
}

fn binder_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut misses = 0;
    let mut worst_gap: f64 = 0.0;
    let mut sizes = [0usize; 9];
    for instance in 0..100 {
        let n = 4 + instance % 5;
        sizes[n] += 1;
        let psm = noisy_psm(&mut rng, n);
        let exhaustive = enumerate_partitions(n)
            .iter()
            .map(|p| binder_expected_loss(p, &psm))
            .fold(f64::INFINITY, f64::min);
        let found = search_optimal_partition(&psm, 16, None, &mut rng);
        let gap = binder_expected_loss(&found, &psm) - exhaustive;
        if gap > 1e-9 {
            misses += 1;
            worst_gap = worst_gap.max(gap);
        }
    }
    Verdict::new(
        misses == 0,
        format!("{misses}/100 instances above the exhaustive minimum (N = 4..8, 20 each), worst gap {worst_gap:.2e}"),
    )
}

fn synthetic_recovery() -> Verdict {
    let dims = Dimensions {
        n_units: 120,
        n_periods: 8,
        n_categories: 3,
        n_cluster_covariates: 2,
        n_global_covariates: 2,
    };
    let truth = separated_truth(&dims, 3, 2.0);
    let mut good = 0;
    let (mut covered, mut total) = (0, 0);
    let mut aris = Vec::new();
    for rep in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + rep);
        let (data, truth) = simulate_panel(&dims, &TruthPolicy::Given(truth.clone()), &[20], &mut rng).unwrap();
        let mut cfg = SamplerConfig::new(&dims);
        cfg.n_burnin = 1000;
        cfg.n_retained = 2000;
        cfg.seed = 7000 + rep;
        let fit = two_stage_fit(&data, &cfg, &mut rng).unwrap();
        let ari = adjusted_rand_index(&fit.partition, &truth.assignments);
        aris.push(format!("{ari:.2}"));
        if ari >= 0.9 {
            good += 1;
        }
        for k in 0..dims.n_global_covariates {
            for j in 0..dims.n_free_categories() {
                let draws: Vec<f64> = fit.stage_two.draws.iter().map(|d| d.theta[(k, j)]).collect();
                let (lo, hi) = (quantile(&draws, 0.05), quantile(&draws, 0.95));
                total += 1;
                if lo <= truth.theta[(k, j)] && truth.theta[(k, j)] <= hi {
                    covered += 1;
                }
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    Verdict::new(
        good >= 9 && coverage >= 0.8,
        format!(
            "ARI >= 0.9 in {good}/10 replications [{}]; theta 90% interval coverage {covered}/{total} = {:.0}%",
            aris.join(" "),
            100.0 * coverage
        ),
    )
}

fn marginal_effects() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_rel: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let j = rng.random_range(2..=6);
        let mut psi: Vec<f64> = (0..j).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut coeff: Vec<f64> = (0..j).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        psi[j - 1] = 0.0;
        coeff[j - 1] = 0.0;
        let p = category_probabilities(&psi);
        let analytic = marginal_effect_point(&p, &coeff);
        // Central differences in the covariate, one Richardson step.
        let at = |h: f64| {
            let shifted: Vec<f64> = psi.iter().zip(&coeff).map(|(s, b)| s + h * b).collect();
            category_probabilities(&shifted)
        };
        let central = |h: f64| -> Vec<f64> {
            let (up, down) = (at(h), at(-h));
            up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect()
        };
        let (coarse, fine) = (central(1e-3), central(5e-4));
        for l in 0..j {
            let numeric = (4.0 * fine[l] - coarse[l]) / 3.0;
            let rel = (analytic[l] - numeric).abs() / analytic[l].abs().max(1e-6);
            worst_rel = worst_rel.max(rel);
        }
        worst_sum = worst_sum.max(analytic.iter().sum::<f64>().abs());
    }
    Verdict::new(
        worst_rel < 1e-6 && worst_sum < 1e-10,
        format!("worst relative error {worst_rel:.2e} (limit 1e-6), worst category sum {worst_sum:.2e} (limit 1e-10)"),
    )
}

fn files_identical(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "timing.json")
        .collect();
    names.sort();
    for name in &names {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{} differs", name.to_string_lossy())),
        }
    }
    Ok(names.len())
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dims = Dimensions {
        n_units: 12,
        n_periods: 4,
        n_categories: 3,
        n_cluster_covariates: 2,
        n_global_covariates: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let truth = separated_truth(&dims, 2, 1.5);
    let (data, _) = simulate_panel(&dims, &TruthPolicy::Given(truth), &[15], &mut rng).unwrap();
    let csv = tmp.path().join("data.csv");
    save_panel(&csv, &data).unwrap();

    let mut compared = 0;
    for format in [DrawFormat::Csv, DrawFormat::Binary] {
        let mut dirs = Vec::new();
        for run in 0..2 {
            let (loaded, _) = load_panel(&csv, &identity_spec(&data)).unwrap();
            let mut cfg = SamplerConfig::new(&dims);
            cfg.n_burnin = 100;
            cfg.n_retained = 200;
            cfg.seed = 99;
            cfg.init = InitPolicy::RandomK { k: 3 };
            cfg.store_unit_coefficients = true;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let chain = run_mcmc(&loaded, &cfg, &mut rng).unwrap();
            let dir = tmp.path().join(format!("{format:?}-{run}"));
            write_chain(&dir, &chain, format).unwrap();
            dirs.push(dir);
        }
        match files_identical(&dirs[0], &dirs[1]) {
            Ok(n) => compared += n,
            Err(e) => return Verdict::new(false, format!("{format:?}: {e}")),
        }
    }
    Verdict::new(compared == 12, format!("{compared} manifest and draw files byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<f64>, Check); 9] = [
        ("CRP prior recovery", Some(120.0), crp_prior_recovery),
        ("prior cluster count", Some(300.0), prior_cluster_count),
        ("Polya-Gamma moments", Some(60.0), pg_moments),
        ("Gaussian update oracle", Some(60.0), gaussian_update_oracle),
        ("Geweke joint-distribution test", Some(1800.0), geweke_joint_test),
        ("Binder search exactness", Some(120.0), binder_exactness),
        ("synthetic recovery", Some(1200.0), synthetic_recovery),
        ("marginal effects", Some(60.0), marginal_effects),
        ("reproducibility", None, reproducibility),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.iter().enumerate() {
        let number = k + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let verdict = check();
        let secs = start.elapsed().as_secs_f64();
        let in_time = budget.is_none_or(|b| secs <= b);
        let passed = verdict.passed && in_time;
        if !passed {
            failed += 1;
        }
        let limit = budget.map_or(String::new(), |b| format!(" of {b:.0} s allowed"));
        println!(
            "criterion {number} ({name}): {} | {} | {secs:.1} s{limit}",
            if passed { "PASS" } else { "FAIL" },
            verdict.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
