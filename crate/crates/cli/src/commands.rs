use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bnppc::diagnostics::summarize_trace;
use bnppc::dp::DpConfig;
use bnppc::effects::{average_posterior_effects, EffectOptions};
use bnppc::gauss::PriorSpec;
use bnppc::io::chain::{read_chain, write_chain, DrawFormat};
use bnppc::io::dataset::{identity_spec, load_panel, save_panel, IngestionSpec, StandardizationRecord};
use bnppc::io::tables::{read_json, read_partition, write_effects, write_json, write_partition, write_similarity, TruthFile};
use bnppc::partition::{binder_expected_loss, posterior_similarity, search_optimal_partition};
use bnppc::sampler::{run_mcmc, two_stage_fit, InitPolicy};
use bnppc::sim::{geweke_test, separated_truth, simulate_panel, GewekeSetup, TruthPolicy};
use bnppc::{ChainOutput, Dimensions, PanelData, SamplerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{Cli, Command, DataArgs, DiagnoseArgs, EffectsArgs, FitArgs, GewekeArgs, PartitionArgs, SimulateArgs};

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cli.global.output_dir.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seed = cli.global.seed;
    match cli.command {
        Command::Simulate(a) => simulate(&a, seed, out),
        Command::Fit(a) => fit(&a, seed, out),
        Command::Partition(a) => partition(&a, seed, out),
        Command::Effects(a) => effects(&a, out),
        Command::Diagnose(a) => diagnose(&a, out),
        Command::Geweke(a) => geweke(&a, seed, out),
    }
}

fn isotropic(dims: &Dimensions, sd: f64) -> Result<PriorSpec> {
    if !(sd > 0.0 && sd.is_finite()) {
        bail!("--prior-sd must be positive");
    }
    Ok(PriorSpec::isotropic(
        dims.n_cluster_covariates,
        dims.n_global_covariates,
        dims.n_free_categories(),
        0.0,
        sd * sd,
    ))
}

fn simulate(a: &SimulateArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let dims = Dimensions {
        n_units: a.units,
        n_periods: a.periods,
        n_categories: a.categories,
        n_cluster_covariates: a.cluster_covariates + 1,
        n_global_covariates: a.global_covariates,
    };
    dims.validate()?;
    let policy = match a.clusters {
        Some(0) => bail!("--clusters must be at least 1"),
        Some(m) => TruthPolicy::Given(separated_truth(&dims, m, a.gap)),
        None => TruthPolicy::Prior {
            dp: DpConfig {
                a_alpha: a.alpha_shape,
                b_alpha: a.alpha_rate,
                ..DpConfig::default()
            },
            prior: isotropic(&dims, a.prior_sd)?,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (data, truth) = simulate_panel(&dims, &policy, &[a.trials], &mut rng)?;
    save_panel(out.join("data.csv"), &data)?;
    write_json(out.join("spec.json"), &identity_spec(&data))?;
    write_json(out.join("truth.json"), &TruthFile::from(&truth))?;
    println!(
        "simulated {} units x {} periods, {} true clusters -> {}",
        dims.n_units,
        dims.n_periods,
        truth.beta_star.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load(input: &DataArgs) -> Result<(PanelData, StandardizationRecord)> {
    let spec: IngestionSpec = read_json(&input.spec).with_context(|| format!("reading spec {}", input.spec.display()))?;
    load_panel(&input.data, &spec).with_context(|| format!("loading {}", input.data.display()))
}

fn fit(a: &FitArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let (data, record) = load(&a.input)?;
    let dims = *data.dims();
    let mut cfg = SamplerConfig::new(&dims);
    cfg.n_burnin = a.burnin;
    cfg.n_retained = a.draws;
    cfg.thin = a.thin;
    cfg.seed = seed;
    cfg.dp = DpConfig {
        a_alpha: a.alpha_shape,
        b_alpha: a.alpha_rate,
        n_aux: a.n_aux,
    };
    cfg.prior = isotropic(&dims, a.prior_sd)?;
    if let Some(k) = a.init_clusters {
        cfg.init = InitPolicy::RandomK { k };
    }
    cfg.initial_alpha = a.initial_alpha;
    cfg.store_unit_coefficients = a.store_unit_coefficients;
    cfg.partition_restarts = a.restarts;
    cfg.sample_alpha_when_fixed = a.sample_alpha;
    cfg.stage_two_sizes = match (a.stage_two_burnin, a.stage_two_draws) {
        (None, None) => None,
        (b, d) => Some((b.unwrap_or(a.burnin / 2), d.unwrap_or((a.draws / 2).max(1)))),
    };
    if let Some(path) = &a.fix_partition {
        cfg.fixed_partition = Some(read_partition(path, data.labels())?);
    }
    cfg.validate(&dims)?;
    let format: DrawFormat = a.format.parse()?;
    write_json(out.join("standardization.json"), &record)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if a.two_stage {
        let result = two_stage_fit(&data, &cfg, &mut rng)?;
        write_chain(out.join("stage-one"), &result.stage_one, format)?;
        write_partition(out.join("partition.csv"), data.labels(), &result.partition)?;
        write_chain(out.join("stage-two"), &result.stage_two, format)?;
        let m = result.partition.iter().max().map_or(0, |v| v + 1);
        println!(
            "stage one {}+{}, {m} clusters, stage two {}+{} -> {}",
            result.stage_one.config.n_burnin,
            result.stage_one.config.n_retained,
            result.stage_two.config.n_burnin,
            result.stage_two.config.n_retained,
            out.display()
        );
    } else {
        let chain = run_mcmc(&data, &cfg, &mut rng)?;
        write_chain(out.join("chain"), &chain, format)?;
        println!(
            "{} draws in {:.1} s -> {}",
            chain.draws.len(),
            chain.timing.elapsed_seconds,
            out.join("chain").display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn partition(a: &PartitionArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let chain = read_chain(&a.chain).with_context(|| format!("reading chain {}", a.chain.display()))?;
    let psm = posterior_similarity(&chain.draws)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let best = search_optimal_partition(&psm, a.restarts, a.max_clusters, &mut rng);
    let loss = binder_expected_loss(&best, &psm);
    let m = best.iter().max().map_or(0, |v| v + 1);
    write_partition(out.join("partition.csv"), &chain.labels, &best)?;
    write_similarity(out.join("psm.csv"), &chain.labels, &psm)?;
    write_json(
        out.join("partition.json"),
        &json!({ "n_clusters": m, "expected_binder_loss": loss, "restarts": a.restarts, "n_draws": chain.draws.len() }),
    )?;
    println!("{m} clusters, expected Binder loss {loss:.4}");
    Ok(ExitCode::SUCCESS)
}

fn effects(a: &EffectsArgs, out: &Path) -> Result<ExitCode> {
    let chain = read_chain(&a.chain).with_context(|| format!("reading chain {}", a.chain.display()))?;
    let (data, record) = load(&a.input)?;
    let partition = read_partition(&a.partition, data.labels())?;
    let options = EffectOptions {
        covariates: a.covariates.clone(),
        scales: a.scale.iter().cloned().collect::<BTreeMap<_, _>>(),
        standardization: if a.standardized { BTreeMap::new() } else { record.divisors() },
    };
    let table = average_posterior_effects(&chain, &data, &partition, &options)?;
    write_effects(out.join("effects.csv"), &table)?;
    let significant = table.iter().filter(|e| e.significant).count();
    println!("{} effects, {significant} with 10-90% intervals excluding zero", table.len());
    Ok(ExitCode::SUCCESS)
}

/// Scalar traces worth monitoring: concentration, cluster count,
/// log-likelihood and every global coefficient.
fn traces(chain: &ChainOutput) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![
        ("alpha".to_string(), chain.draws.iter().map(|d| d.alpha).collect()),
        ("n_clusters".to_string(), chain.draws.iter().map(|d| d.n_clusters() as f64).collect()),
        ("log_likelihood".to_string(), chain.draws.iter().map(|d| d.log_likelihood).collect()),
    ];
    let labels = &chain.labels;
    for (k, cov) in labels.global_covariate_names.iter().enumerate() {
        for (j, cat) in labels.category_names[..chain.dims.n_free_categories()].iter().enumerate() {
            out.push((format!("theta:{cov}:{cat}"), chain.draws.iter().map(|d| d.theta[(k, j)]).collect()));
        }
    }
    out
}

fn diagnose(a: &DiagnoseArgs, out: &Path) -> Result<ExitCode> {
    let chain = read_chain(&a.chain).with_context(|| format!("reading chain {}", a.chain.display()))?;
    if chain.draws.len() < 2 {
        bail!("need at least two draws to diagnose");
    }
    let traces = traces(&chain);
    let mut summary = csv::Writer::from_path(out.join("diagnostics.csv"))?;
    summary.write_record(["parameter", "mean", "sd", "ess"])?;
    let mut acf = csv::Writer::from_path(out.join("autocorrelation.csv"))?;
    acf.write_record(["parameter", "lag", "value"])?;
    for (name, values) in &traces {
        let s = summarize_trace(values, a.max_lag);
        summary.write_record([name.clone(), s.mean.to_string(), s.sd.to_string(), s.ess.to_string()])?;
        for (lag, v) in s.acf.iter().enumerate() {
            acf.write_record([name.clone(), lag.to_string(), v.to_string()])?;
        }
        println!("{name:<32} mean {:>10.4}  ess {:>9.1}", s.mean, s.ess);
    }
    summary.flush()?;
    acf.flush()?;

    let mut extract = csv::Writer::from_path(out.join("traces.csv"))?;
    let mut header = vec!["iteration".to_string()];
    header.extend(traces.iter().map(|t| t.0.clone()));
    extract.write_record(&header)?;
    for (d, draw) in chain.draws.iter().enumerate().step_by(a.trace_every.max(1)) {
        let mut row = vec![draw.iteration.to_string()];
        row.extend(traces.iter().map(|t| t.1[d].to_string()));
        extract.write_record(&row)?;
    }
    extract.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn geweke(a: &GewekeArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let setup = GewekeSetup {
        n_samples: a.samples,
        burnin: a.burnin,
        thin: a.thin,
        trials: a.trials,
        ..GewekeSetup::default()
    };
    let cfg = SamplerConfig::new(&setup.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = geweke_test(&setup, &cfg, &mut rng)?;
    write_json(out.join("geweke.json"), &report)?;
    let worst = report.max_abs_z();
    println!("{} test functions, max |z| = {worst:.3}", report.statistics.len());
    if worst >= a.threshold {
        eprintln!("calibration check failed: max |z| {worst:.3} >= {}", a.threshold);
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
