//! The full Gibbs sampler: allocation sweep, Pólya-Gamma Gaussian updates
//! per category, concentration update, plus the two-stage procedure that
//! reruns the chain conditional on a point estimate of the partition.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{allocation_sweep, compact_labels, sample_concentration_with, ConcentrationState, DpConfig};
use crate::error::{Error, Result};
use crate::gauss::{draw_beta_column, sample_theta_with, PriorSpec};
use crate::model::{log_likelihood_total, ClusterState, Dimensions, GlobalCoefficients, PanelData, PanelLabels};
use crate::partition::{posterior_similarity, search_optimal_partition};

/// Deliberate defects used to check that the calibration tests can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// `kappa = y - n` instead of `y - n/2`.
    KappaOffset,
    /// Concentration mixing odds without the `N` factor in the denominator.
    AlphaOddsDenominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitPolicy {
    /// One cluster, all coefficients zero.
    #[default]
    SingleCluster,
    /// Uniform random labels over `k` clusters, blocks from the base measure.
    RandomK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_burnin: usize,
    pub n_retained: usize,
    pub thin: usize,
    pub seed: u64,
    pub dp: DpConfig,
    pub prior: PriorSpec,
    /// Zero-based contiguous labels; disables the allocation step.
    pub fixed_partition: Option<Vec<usize>>,
    pub init: InitPolicy,
    /// Also write per-unit coefficient blocks when the chain is saved.
    pub store_unit_coefficients: bool,
    /// Starting concentration; defaults to the prior mean `a / b`.
    pub initial_alpha: Option<f64>,
    /// Keep updating the concentration when the partition is fixed.
    pub sample_alpha_when_fixed: bool,
    /// Random restarts for the partition search between the two stages.
    pub partition_restarts: usize,
    /// Stage-2 `(burn-in, retained)`; halves stage 1 when absent.
    pub stage_two_sizes: Option<(usize, usize)>,
    #[doc(hidden)]
    #[serde(skip)]
    pub fault: Fault,
}

impl SamplerConfig {
    /// Defaults sized for `dims`: 5000 burn-in, 10000 retained, no thinning,
    /// standard normal priors and `Gamma(3, 2)` on the concentration.
    pub fn new(dims: &Dimensions) -> Self {
        SamplerConfig {
            n_burnin: 5000,
            n_retained: 10_000,
            thin: 1,
            seed: 0,
            dp: DpConfig::default(),
            prior: PriorSpec::standard(dims),
            fixed_partition: None,
            init: InitPolicy::SingleCluster,
            store_unit_coefficients: false,
            initial_alpha: None,
            sample_alpha_when_fixed: false,
            partition_restarts: 16,
            stage_two_sizes: None,
            fault: Fault::None,
        }
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        dims.validate()?;
        self.dp.validate()?;
        self.prior.validate(dims)?;
        if self.n_retained == 0 {
            return Err(Error::config("n_retained must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        if self.partition_restarts == 0 {
            return Err(Error::config("partition_restarts must be at least 1"));
        }
        if let Some(a) = self.initial_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::config("initial alpha must be positive"));
            }
        }
        if let InitPolicy::RandomK { k } = self.init {
            if k == 0 {
                return Err(Error::config("random-k initialisation needs k >= 1"));
            }
        }
        if let Some(p) = &self.fixed_partition {
            if p.len() != dims.n_units {
                return Err(Error::config(format!(
                    "fixed partition has {} labels for {} units",
                    p.len(),
                    dims.n_units
                )));
            }
            check_contiguous(p)?;
        }
        Ok(())
    }
}

fn check_contiguous(labels: &[usize]) -> Result<usize> {
    let m = labels.iter().max().map_or(0, |&v| v + 1);
    let mut seen = vec![false; m];
    for &s in labels {
        seen[s] = true;
    }
    if let Some(gap) = seen.iter().position(|&v| !v) {
        return Err(Error::config(format!("partition labels are not contiguous: {gap} is unused")));
    }
    Ok(m)
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub assignments: Vec<usize>,
    pub alpha: f64,
    pub beta_star: Vec<DMatrix<f64>>,
    pub theta: DMatrix<f64>,
    pub log_likelihood: f64,
}

impl Draw {
    pub fn n_clusters(&self) -> usize {
        self.beta_star.len()
    }
}

impl AsRef<[usize]> for Draw {
    fn as_ref(&self) -> &[usize] {
        &self.assignments
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
    pub seconds_per_iteration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    pub config: SamplerConfig,
    pub dims: Dimensions,
    pub labels: PanelLabels,
    pub timing: Timing,
    pub seed: u64,
}

/// Mutable chain state between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub clusters: ClusterState,
    pub theta: GlobalCoefficients,
    pub concentration: ConcentrationState,
}

impl ChainState {
    /// Starting state according to the configured initialisation policy.
    pub fn initial<R: Rng + ?Sized>(data: &PanelData, config: &SamplerConfig, rng: &mut R) -> Result<Self> {
        let dims = data.dims();
        let (kc, knc, jm1) = (dims.n_cluster_covariates, dims.n_global_covariates, dims.n_free_categories());
        let clusters = if let Some(p) = &config.fixed_partition {
            let m = check_contiguous(p)?;
            ClusterState::from_parts(p.clone(), vec![DMatrix::zeros(kc, jm1); m])?
        } else {
            match config.init {
                InitPolicy::SingleCluster => ClusterState::single_cluster(dims.n_units, kc, jm1),
                InitPolicy::RandomK { k } => {
                    let labels: Vec<usize> = (0..dims.n_units).map(|_| rng.random_range(0..k)).collect();
                    let blocks = (0..k).map(|_| config.prior.draw_cluster_block(rng)).collect();
                    let mut sizes = vec![0; k];
                    for &s in &labels {
                        sizes[s] += 1;
                    }
                    let raw = ClusterState {
                        assignments: labels,
                        sizes,
                        beta_star: blocks,
                    };
                    compact_labels(&raw)
                }
            }
        };
        let alpha = config.initial_alpha.unwrap_or(config.dp.a_alpha / config.dp.b_alpha);
        Ok(ChainState {
            clusters,
            theta: GlobalCoefficients::zeros(knc, jm1),
            concentration: ConcentrationState { alpha },
        })
    }
}

/// One full iteration: allocation (unless `fixed`), the per-category
/// Gaussian updates, then the concentration (unless `fixed` and not
/// configured to keep sampling it).
pub fn gibbs_step<R: Rng + ?Sized>(
    data: &PanelData,
    chain: &mut ChainState,
    config: &SamplerConfig,
    fixed: bool,
    iteration: usize,
    rng: &mut R,
) -> Result<()> {
    let ctx = |what: &str| format!("iteration {iteration}, {what}");
    if !fixed {
        allocation_sweep(
            data,
            &mut chain.clusters,
            &chain.theta,
            &chain.concentration,
            &config.dp,
            &config.prior,
            rng,
        )
        .map_err(|e| e.with_context(ctx("allocation")))?;
    }

    let m = chain.clusters.n_clusters();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &s) in chain.clusters.assignments.iter().enumerate() {
        members[s].push(i);
    }
    for j in 0..data.dims().n_free_categories() {
        let seeds: Vec<u64> = (0..m).map(|_| rng.random()).collect();
        let clusters = &chain.clusters;
        let theta = &chain.theta;
        let updated: Vec<Result<DVector<f64>>> = (0..m)
            .into_par_iter()
            .map(|c| {
                let mut local = ChaCha8Rng::seed_from_u64(seeds[c]);
                let column = draw_beta_column(
                    data,
                    &members[c],
                    &clusters.beta_star[c],
                    j,
                    theta,
                    &config.prior,
                    config.fault,
                    &mut local,
                )
                .map_err(|e| e.with_context(ctx(&format!("cluster {c}, category {j}"))))?;
                Ok(column)
            })
            .collect();
        for (c, column) in updated.into_iter().enumerate() {
            chain.clusters.beta_star[c].set_column(j, &column?);
        }
        sample_theta_with(data, j, &chain.clusters, &mut chain.theta, &config.prior, config.fault, rng)
            .map_err(|e| e.with_context(ctx(&format!("global coefficients, category {j}"))))?;
    }

    if !fixed || config.sample_alpha_when_fixed {
        chain.concentration = sample_concentration_with(
            &chain.concentration,
            chain.clusters.n_clusters(),
            data.n_units(),
            &config.dp,
            config.fault,
            rng,
        )?;
    }
    Ok(())
}

/// Runs `n_burnin + n_retained * thin` iterations and keeps every `thin`-th
/// post-burn-in state.
pub fn run_mcmc<R: Rng + ?Sized>(data: &PanelData, config: &SamplerConfig, rng: &mut R) -> Result<ChainOutput> {
    let dims = *data.dims();
    config.validate(&dims)?;
    let start = Instant::now();
    let fixed = config.fixed_partition.is_some();
    let mut chain = ChainState::initial(data, config, rng)?;
    let total = config.n_burnin + config.n_retained * config.thin;
    let mut draws = Vec::with_capacity(config.n_retained);
    for it in 0..total {
        gibbs_step(data, &mut chain, config, fixed, it, rng)?;
        if it >= config.n_burnin && (it - config.n_burnin + 1).is_multiple_of(config.thin) {
            draws.push(Draw {
                iteration: it,
                assignments: chain.clusters.assignments.clone(),
                alpha: chain.concentration.alpha,
                beta_star: chain.clusters.beta_star.clone(),
                theta: chain.theta.theta.clone(),
                log_likelihood: log_likelihood_total(data, &chain.clusters, &chain.theta),
            });
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(ChainOutput {
        draws,
        config: config.clone(),
        dims,
        labels: data.labels().clone(),
        timing: Timing {
            elapsed_seconds: elapsed,
            seconds_per_iteration: if total > 0 { elapsed / total as f64 } else { 0.0 },
        },
        seed: config.seed,
    })
}

/// [`run_mcmc`] with a ChaCha stream seeded from `config.seed`.
pub fn run_mcmc_seeded(data: &PanelData, config: &SamplerConfig) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_mcmc(data, config, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageFit {
    pub stage_one: ChainOutput,
    /// Binder point estimate from stage one, first-appearance labels.
    pub partition: Vec<usize>,
    pub stage_two: ChainOutput,
}

/// Stage-2 configuration derived from a stage-1 run.
pub fn stage_two_config(config: &SamplerConfig, stage_one: &ChainOutput, partition: Vec<usize>) -> SamplerConfig {
    let (burnin, retained) = config
        .stage_two_sizes
        .unwrap_or((config.n_burnin / 2, (config.n_retained / 2).max(1)));
    let mut alphas: Vec<f64> = stage_one.draws.iter().map(|d| d.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    let median = crate::diagnostics::quantile_sorted(&alphas, 0.5);
    SamplerConfig {
        n_burnin: burnin,
        n_retained: retained,
        fixed_partition: Some(partition),
        initial_alpha: Some(median),
        ..config.clone()
    }
}

/// Free run, Binder partition search on its draws, then a run conditional
/// on that partition.
pub fn two_stage_fit<R: Rng + ?Sized>(data: &PanelData, config: &SamplerConfig, rng: &mut R) -> Result<TwoStageFit> {
    if config.fixed_partition.is_some() {
        return Err(Error::config("two-stage fit starts from a free partition"));
    }
    let stage_one = run_mcmc(data, config, rng)?;
    let psm = posterior_similarity(&stage_one.draws)?;
    let partition = search_optimal_partition(&psm, config.partition_restarts, None, rng);
    let cfg2 = stage_two_config(config, &stage_one, partition.clone());
    let stage_two = run_mcmc(data, &cfg2, rng)?;
    Ok(TwoStageFit {
        stage_one,
        partition,
        stage_two,
    })
}
