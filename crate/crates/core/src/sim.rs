//! Synthetic panels from the generative model and the joint-distribution
//! (Geweke) calibration test of the sampler.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::effective_sample_size;
use crate::error::{Error, Result};
use crate::gauss::PriorSpec;
use crate::model::{category_probabilities, fill_linear_predictor, log_likelihood_total, ClusterState, Dimensions, GlobalCoefficients, PanelData, PanelLabels};
use crate::sampler::{gibbs_step, ChainState, SamplerConfig};
use crate::dp::{ConcentrationState, DpConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub assignments: Vec<usize>,
    pub beta_star: Vec<DMatrix<f64>>,
    pub theta: DMatrix<f64>,
    /// Set when the partition was drawn from the Pólya urn.
    pub alpha: Option<f64>,
}

impl GroundTruth {
    pub fn cluster_state(&self) -> Result<ClusterState> {
        ClusterState::from_parts(self.assignments.clone(), self.beta_star.clone())
    }

    pub fn global(&self) -> GlobalCoefficients {
        GlobalCoefficients {
            theta: self.theta.clone(),
        }
    }

    fn check(&self, dims: &Dimensions) -> Result<()> {
        let state = self.cluster_state()?;
        if state.n_units() != dims.n_units {
            return Err(Error::config("truth has the wrong number of units"));
        }
        let block = (dims.n_cluster_covariates, dims.n_free_categories());
        if self.beta_star.iter().any(|b| b.shape() != block)
            || self.theta.shape() != (dims.n_global_covariates, dims.n_free_categories())
        {
            return Err(Error::config("truth coefficient shapes do not match the dimensions"));
        }
        Ok(())
    }
}

/// Where the true parameters come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthPolicy {
    Given(GroundTruth),
    /// Concentration from its Gamma prior, partition from the urn,
    /// coefficients from the base measure and the global prior.
    Prior { dp: DpConfig, prior: PriorSpec },
}

/// Draws a partition from the Pólya urn, first-appearance labels.
pub fn sample_crp<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = rng.random::<f64>() * (i as f64 + alpha);
        let mut pick = sizes.len();
        for (k, &s) in sizes.iter().enumerate() {
            if u < s as f64 {
                pick = k;
                break;
            }
            u -= s as f64;
        }
        if pick == sizes.len() {
            sizes.push(0);
        }
        sizes[pick] += 1;
        labels.push(pick);
    }
    labels
}

/// Parameters drawn from the full prior.
pub fn draw_prior_truth<R: Rng + ?Sized>(n_units: usize, dp: &DpConfig, prior: &PriorSpec, rng: &mut R) -> Result<GroundTruth> {
    let gamma = Gamma::new(dp.a_alpha, 1.0 / dp.b_alpha).map_err(|e| Error::config(format!("alpha prior: {e}")))?;
    let alpha = loop {
        let a: f64 = gamma.sample(rng);
        if a > 0.0 {
            break a;
        }
    };
    let assignments = sample_crp(n_units, alpha, rng);
    let m = assignments.iter().max().map_or(0, |v| v + 1);
    Ok(GroundTruth {
        beta_star: (0..m).map(|_| prior.draw_cluster_block(rng)).collect(),
        theta: prior.draw_global(rng).theta,
        assignments,
        alpha: Some(alpha),
    })
}

/// A well-separated truth: cluster `c` gets
/// `beta[k, j] = gap * (((c + k + j) mod M) - (M - 1) / 2)`, units are
/// assigned round-robin, global coefficients alternate `+-0.5`.
pub fn separated_truth(dims: &Dimensions, n_clusters: usize, gap: f64) -> GroundTruth {
    let (kc, knc, jm1) = (dims.n_cluster_covariates, dims.n_global_covariates, dims.n_free_categories());
    let m = n_clusters.max(1);
    let centre = (m as f64 - 1.0) / 2.0;
    GroundTruth {
        assignments: (0..dims.n_units).map(|i| i % m).collect(),
        beta_star: (0..m)
            .map(|c| DMatrix::from_fn(kc, jm1, |k, j| gap * (((c + k + j) % m) as f64 - centre)))
            .collect(),
        theta: DMatrix::from_fn(knc, jm1, |k, j| if (k + j) % 2 == 0 { 0.5 } else { -0.5 }),
        alpha: None,
    }
}

/// Multinomial counts for every cell given the parameters.
pub fn draw_counts<R: Rng + ?Sized>(data: &PanelData, state: &ClusterState, theta: &GlobalCoefficients, rng: &mut R) -> Vec<u32> {
    let j_all = data.n_categories();
    let mut y = Vec::with_capacity(data.n_units() * data.n_periods() * j_all);
    let mut psi = vec![0.0; j_all];
    for i in 0..data.n_units() {
        for t in 0..data.n_periods() {
            fill_linear_predictor(data.x_cluster(i, t), data.x_global(i, t), state.unit_beta(i), &theta.theta, &mut psi);
            let p = category_probabilities(&psi);
            multinomial_into(data.trials(i, t), &p, rng, &mut y);
        }
    }
    y
}

/// Sequential conditional binomials.
fn multinomial_into<R: Rng + ?Sized>(n: u32, p: &[f64], rng: &mut R, out: &mut Vec<u32>) {
    let mut left = n as u64;
    let mut mass = 1.0;
    for (j, &pj) in p.iter().enumerate() {
        if j + 1 == p.len() {
            out.push(left as u32);
            break;
        }
        let q = if mass > 0.0 { (pj / mass).clamp(0.0, 1.0) } else { 0.0 };
        let v = if left == 0 { 0 } else { Binomial::new(left, q).map(|b| b.sample(rng)).unwrap_or(0) };
        out.push(v as u32);
        left -= v;
        mass -= pj;
    }
}

/// Standard-normal covariates with the intercept column fixed at 1.
pub fn draw_covariates<R: Rng + ?Sized>(dims: &Dimensions, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let cells = dims.n_units * dims.n_periods;
    let mut xc = Vec::with_capacity(cells * dims.n_cluster_covariates);
    for _ in 0..cells {
        xc.push(1.0);
        for _ in 1..dims.n_cluster_covariates {
            xc.push(rng.sample(StandardNormal));
        }
    }
    let xg = (0..cells * dims.n_global_covariates).map(|_| rng.sample(StandardNormal)).collect();
    (xc, xg)
}

/// Forward simulation: covariates, then parameters, then counts.
pub fn simulate_panel<R: Rng + ?Sized>(
    dims: &Dimensions,
    policy: &TruthPolicy,
    trials: &[u32],
    rng: &mut R,
) -> Result<(PanelData, GroundTruth)> {
    dims.validate()?;
    let cells = dims.n_units * dims.n_periods;
    let trials = match trials.len() {
        1 => vec![trials[0]; cells],
        n if n == cells => trials.to_vec(),
        n => return Err(Error::config(format!("{n} trial counts for {cells} cells"))),
    };
    if trials.contains(&0) {
        return Err(Error::config("trials must be positive"));
    }
    let (xc, xg) = draw_covariates(dims, rng);
    let truth = match policy {
        TruthPolicy::Given(t) => t.clone(),
        TruthPolicy::Prior { dp, prior } => draw_prior_truth(dims.n_units, dp, prior, rng)?,
    };
    truth.check(dims)?;
    let placeholder: Vec<u32> = trials
        .iter()
        .flat_map(|&n| std::iter::once(n).chain(std::iter::repeat_n(0, dims.n_categories - 1)))
        .collect();
    let mut data = PanelData::new(*dims, trials, placeholder, xc, xg, PanelLabels::generic(dims))?;
    let y = draw_counts(&data, &truth.cluster_state()?, &truth.global(), rng);
    data.set_counts(y)?;
    Ok((data, truth))
}

/// Small instance for the joint-distribution test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GewekeSetup {
    pub dims: Dimensions,
    pub trials: u32,
    pub n_samples: usize,
    /// Gibbs iterations between recorded states on the successive side.
    pub thin: usize,
    pub burnin: usize,
}

impl Default for GewekeSetup {
    fn default() -> Self {
        GewekeSetup {
            dims: Dimensions {
                n_units: 5,
                n_periods: 3,
                n_categories: 3,
                n_cluster_covariates: 2,
                n_global_covariates: 1,
            },
            trials: 2,
            n_samples: 200_000,
            thin: 1,
            burnin: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub prior_mean: f64,
    pub gibbs_mean: f64,
    pub gibbs_ess: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub statistics: Vec<GewekeStatistic>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&GewekeStatistic> {
        self.statistics.iter().find(|s| s.name == name)
    }
}

/// Names of the test functions, in [`test_functions`] order.
pub fn test_function_names(dims: &Dimensions) -> Vec<String> {
    let mut names = Vec::new();
    let (kc, knc, jm1, n) = (dims.n_cluster_covariates, dims.n_global_covariates, dims.n_free_categories(), dims.n_units);
    for i in 0..n.min(2) {
        for k in 0..kc {
            for j in 0..jm1 {
                names.push(format!("beta[u{i},{k},{j}]"));
                names.push(format!("beta[u{i},{k},{j}]^2"));
            }
        }
    }
    for k in 0..knc {
        for j in 0..jm1 {
            names.push(format!("theta[{k},{j}]"));
            names.push(format!("theta[{k},{j}]^2"));
        }
    }
    for s in ["M", "M^2", "alpha", "alpha^2", "loglik", "y[first category]"] {
        names.push(s.to_string());
    }
    for a in 0..n {
        for b in a + 1..n {
            names.push(format!("same[{a},{b}]"));
        }
    }
    names
}

/// Label-invariant functions of (parameters, data).
pub fn test_functions(data: &PanelData, state: &ClusterState, theta: &GlobalCoefficients, alpha: f64, out: &mut Vec<f64>) {
    out.clear();
    let dims = data.dims();
    for i in 0..dims.n_units.min(2) {
        let b = state.unit_beta(i);
        for k in 0..dims.n_cluster_covariates {
            for j in 0..dims.n_free_categories() {
                out.push(b[(k, j)]);
                out.push(b[(k, j)] * b[(k, j)]);
            }
        }
    }
    for k in 0..dims.n_global_covariates {
        for j in 0..dims.n_free_categories() {
            let v = theta.theta[(k, j)];
            out.push(v);
            out.push(v * v);
        }
    }
    let m = state.n_clusters() as f64;
    out.extend([m, m * m, alpha, alpha * alpha, log_likelihood_total(data, state, theta)]);
    let mut first = 0u64;
    for i in 0..dims.n_units {
        for t in 0..dims.n_periods {
            first += data.counts(i, t)[0] as u64;
        }
    }
    out.push(first as f64);
    let s = &state.assignments;
    for a in 0..dims.n_units {
        for b in a + 1..dims.n_units {
            out.push(if s[a] == s[b] { 1.0 } else { 0.0 });
        }
    }
}

struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
    n: usize,
}

impl Moments {
    fn new(k: usize) -> Self {
        Moments {
            sum: vec![0.0; k],
            sq: vec![0.0; k],
            n: 0,
        }
    }

    fn push(&mut self, v: &[f64]) {
        for (k, &x) in v.iter().enumerate() {
            self.sum[k] += x;
            self.sq[k] += x * x;
        }
        self.n += 1;
    }

    fn mean(&self, k: usize) -> f64 {
        self.sum[k] / self.n as f64
    }

    fn var(&self, k: usize) -> f64 {
        let m = self.mean(k);
        (self.sq[k] / self.n as f64 - m * m).max(0.0)
    }
}

/// Compares the marginal-conditional simulator (parameters from the prior,
/// then data) with the successive-conditional one (a full Gibbs iteration,
/// then fresh data given the parameters). Under a correct sampler both
/// target the same joint, so every test-function mean agrees.
///
/// `config` supplies the priors and may carry a deliberate fault; its run
/// lengths and partition settings are ignored.
pub fn geweke_test<R: Rng + ?Sized>(setup: &GewekeSetup, config: &SamplerConfig, rng: &mut R) -> Result<GewekeReport> {
    let dims = setup.dims;
    config.validate(&dims)?;
    if setup.n_samples < 2 || setup.thin == 0 {
        return Err(Error::config("Geweke test needs at least two samples and thin >= 1"));
    }
    let (xc, xg) = draw_covariates(&dims, rng);
    let cells = dims.n_units * dims.n_periods;
    let trials = vec![setup.trials.max(1); cells];
    let placeholder: Vec<u32> = trials
        .iter()
        .flat_map(|&n| std::iter::once(n).chain(std::iter::repeat_n(0, dims.n_categories - 1)))
        .collect();
    let mut data = PanelData::new(dims, trials, placeholder, xc, xg, PanelLabels::generic(&dims))?;
    let names = test_function_names(&dims);
    let mut buf = Vec::with_capacity(names.len());

    let mut forward = Moments::new(names.len());
    for _ in 0..setup.n_samples {
        let truth = draw_prior_truth(dims.n_units, &config.dp, &config.prior, rng)?;
        let state = truth.cluster_state()?;
        let theta = truth.global();
        let y = draw_counts(&data, &state, &theta, rng);
        data.set_counts(y)?;
        test_functions(&data, &state, &theta, truth.alpha.unwrap_or(0.0), &mut buf);
        forward.push(&buf);
    }

    let mut cfg = config.clone();
    cfg.fixed_partition = None;
    let truth = draw_prior_truth(dims.n_units, &config.dp, &config.prior, rng)?;
    let mut chain = ChainState {
        clusters: truth.cluster_state()?,
        theta: truth.global(),
        concentration: ConcentrationState {
            alpha: truth.alpha.unwrap_or(1.0),
        },
    };
    let y = draw_counts(&data, &chain.clusters, &chain.theta, rng);
    data.set_counts(y)?;
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(setup.n_samples); names.len()];
    for step in 0..setup.burnin + setup.n_samples * setup.thin {
        gibbs_step(&data, &mut chain, &cfg, false, step, rng)?;
        let y = draw_counts(&data, &chain.clusters, &chain.theta, rng);
        data.set_counts(y)?;
        if step >= setup.burnin && (step - setup.burnin + 1).is_multiple_of(setup.thin) {
            test_functions(&data, &chain.clusters, &chain.theta, chain.concentration.alpha, &mut buf);
            for (trace, &v) in traces.iter_mut().zip(&buf) {
                trace.push(v);
            }
        }
    }

    let statistics = names
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let trace = &traces[k];
            let n = trace.len() as f64;
            let mean = trace.iter().sum::<f64>() / n;
            let var = trace.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let ess = effective_sample_size(trace);
            let se2 = forward.var(k) / forward.n as f64 + var / ess;
            let diff = forward.mean(k) - mean;
            let z = if se2 > 0.0 {
                diff / se2.sqrt()
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY.copysign(diff)
            };
            GewekeStatistic {
                name,
                prior_mean: forward.mean(k),
                gibbs_mean: mean,
                gibbs_ess: ess,
                z,
            }
        })
        .collect();
    Ok(GewekeReport { statistics })
}
