//! Dirichlet-process machinery: the Pólya-urn prior, the auxiliary-cluster
//! allocation sweep (Neal's Algorithm 8), label compaction and the
//! concentration update.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::PriorSpec;
use crate::model::{log_sum_exp, ClusterState, GlobalCoefficients, PanelData};
use crate::sampler::Fault;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Gamma prior shape on the concentration.
    pub a_alpha: f64,
    /// Gamma prior rate on the concentration.
    pub b_alpha: f64,
    /// Number of auxiliary clusters offered to each unit.
    pub n_aux: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            a_alpha: 3.0,
            b_alpha: 2.0,
            n_aux: 3,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_alpha > 0.0 && self.a_alpha.is_finite()) {
            return Err(Error::config("a_alpha must be positive"));
        }
        if !(self.b_alpha > 0.0 && self.b_alpha.is_finite()) {
            return Err(Error::config("b_alpha must be positive"));
        }
        if self.n_aux == 0 {
            return Err(Error::config("need at least one auxiliary cluster"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationState {
    pub alpha: f64,
}

/// Log prior of a partition under the Pólya urn with concentration `alpha`.
///
/// Labels must be zero-based and in order of first appearance.
pub fn crp_log_prior(assignments: &[usize], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::input("concentration must be positive"));
    }
    let mut sizes: Vec<usize> = Vec::new();
    let mut total = 0.0;
    for (i, &s) in assignments.iter().enumerate() {
        let denom = (i as f64 + alpha).ln();
        if s < sizes.len() {
            total += (sizes[s] as f64).ln() - denom;
            sizes[s] += 1;
        } else if s == sizes.len() {
            if i > 0 {
                total += alpha.ln() - denom;
            }
            sizes.push(1);
        } else {
            return Err(Error::input(format!(
                "label {s} at position {i} skips ahead of {} opened clusters",
                sizes.len()
            )));
        }
    }
    Ok(total)
}

/// Drops empty clusters and renumbers the rest by first appearance, carrying
/// the coefficient blocks along. Sizes are recomputed from the assignments.
pub fn compact_labels(state: &ClusterState) -> ClusterState {
    let mut map = vec![usize::MAX; state.beta_star.len()];
    let mut order = Vec::new();
    let assignments = state
        .assignments
        .iter()
        .map(|&s| {
            if map[s] == usize::MAX {
                map[s] = order.len();
                order.push(s);
            }
            map[s]
        })
        .collect::<Vec<_>>();
    let mut sizes = vec![0usize; order.len()];
    for &s in &assignments {
        sizes[s] += 1;
    }
    ClusterState {
        assignments,
        sizes,
        beta_star: order.iter().map(|&c| state.beta_star[c].clone()).collect(),
    }
}

/// Per-cell global contributions `x_nc . theta[:, j]` laid out as
/// `(unit, period, free category)`.
pub(crate) fn global_contributions(data: &PanelData, theta: &GlobalCoefficients) -> Vec<f64> {
    let jm1 = data.dims().n_free_categories();
    let mut out = Vec::with_capacity(data.n_units() * data.n_periods() * jm1);
    for i in 0..data.n_units() {
        for t in 0..data.n_periods() {
            let x = data.x_global(i, t);
            for j in 0..jm1 {
                out.push(x.iter().enumerate().map(|(k, v)| v * theta.theta[(k, j)]).sum());
            }
        }
    }
    out
}

/// Unit log-likelihood under `beta` with precomputed global contributions.
fn unit_log_likelihood_cached(
    data: &PanelData,
    i: usize,
    beta: &DMatrix<f64>,
    global: &[f64],
    psi: &mut [f64],
) -> f64 {
    let jm1 = psi.len() - 1;
    let periods = data.n_periods();
    let mut total = 0.0;
    for t in 0..periods {
        let n = data.trials(i, t);
        if n == 0 {
            continue;
        }
        let x = data.x_cluster(i, t);
        let g = &global[(i * periods + t) * jm1..][..jm1];
        for j in 0..jm1 {
            let mut acc = g[j];
            for (k, &xv) in x.iter().enumerate() {
                acc += xv * beta[(k, j)];
            }
            psi[j] = acc;
        }
        psi[jm1] = 0.0;
        let lse = log_sum_exp(psi);
        for (&y, &v) in data.counts(i, t).iter().zip(psi.iter()) {
            total += y as f64 * (v - lse);
        }
    }
    total
}

/// Draws an index from unnormalised log-weights.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &wk) in w.iter().enumerate() {
        if u < wk {
            return k;
        }
        u -= wk;
    }
    // Only reachable through rounding in the running subtraction.
    w.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Reallocates a single unit, keeping every [`ClusterState`] invariant
/// intact on return. Empty clusters are removed immediately by shifting
/// higher labels down, and a winning auxiliary cluster is appended as the
/// last label.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_unit<R: Rng + ?Sized>(
    data: &PanelData,
    i: usize,
    state: &mut ClusterState,
    global: &[f64],
    alpha: f64,
    cfg: &DpConfig,
    base: &PriorSpec,
    rng: &mut R,
) {
    let old = state.assignments[i];
    state.sizes[old] -= 1;

    let mut aux: Vec<DMatrix<f64>> = Vec::with_capacity(cfg.n_aux);
    if state.sizes[old] == 0 {
        // The vacated block keeps its parameter as the first auxiliary slot.
        aux.push(state.beta_star.remove(old));
        state.sizes.remove(old);
        for s in state.assignments.iter_mut() {
            if *s > old {
                *s -= 1;
            }
        }
    }
    while aux.len() < cfg.n_aux {
        aux.push(base.draw_cluster_block(rng));
    }

    let m = state.sizes.len();
    let mut psi = vec![0.0; data.n_categories()];
    let mut log_w = Vec::with_capacity(m + cfg.n_aux);
    for c in 0..m {
        log_w.push(
            (state.sizes[c] as f64).ln()
                + unit_log_likelihood_cached(data, i, &state.beta_star[c], global, &mut psi),
        );
    }
    let log_new = (alpha / cfg.n_aux as f64).ln();
    for block in &aux {
        log_w.push(log_new + unit_log_likelihood_cached(data, i, block, global, &mut psi));
    }

    let k = sample_log_weights(&log_w, rng);
    if k < m {
        state.assignments[i] = k;
        state.sizes[k] += 1;
    } else {
        state.beta_star.push(aux.swap_remove(k - m));
        state.sizes.push(1);
        state.assignments[i] = m;
    }
}

/// One Gibbs pass over all units in index order, followed by compaction to
/// first-appearance labels.
///
/// For each unit the weights are `n_{-i,c} f(Y_i | beta_c, theta)` for the
/// existing clusters and `(alpha / n_aux) f(Y_i | beta_aux, theta)` for the
/// auxiliary ones; the shared factor `1 / (N - 1 + alpha)` is dropped.
pub fn allocation_sweep<R: Rng + ?Sized>(
    data: &PanelData,
    state: &mut ClusterState,
    theta: &GlobalCoefficients,
    conc: &ConcentrationState,
    cfg: &DpConfig,
    base: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    crate::model::check_consistent(data, state, theta)?;
    let global = global_contributions(data, theta);
    for i in 0..data.n_units() {
        update_unit(data, i, state, &global, conc.alpha, cfg, base, rng);
    }
    *state = compact_labels(state);
    Ok(())
}

/// Prior odds and mixing weight of the `a + M` component in the
/// concentration update, given the auxiliary Beta draw `x`.
pub fn concentration_mixing_weight(cfg: &DpConfig, n_clusters: usize, n_units: usize, x: f64) -> (f64, f64) {
    let odds = (cfg.a_alpha + n_clusters as f64 - 1.0) / (n_units as f64 * (cfg.b_alpha - x.ln()));
    (odds, odds / (1.0 + odds))
}

/// Escobar-West update of the concentration given the current cluster count.
pub fn sample_concentration<R: Rng + ?Sized>(
    conc: &ConcentrationState,
    n_clusters: usize,
    n_units: usize,
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<ConcentrationState> {
    sample_concentration_with(conc, n_clusters, n_units, cfg, Fault::None, rng)
}

pub(crate) fn sample_concentration_with<R: Rng + ?Sized>(
    conc: &ConcentrationState,
    n_clusters: usize,
    n_units: usize,
    cfg: &DpConfig,
    fault: Fault,
    rng: &mut R,
) -> Result<ConcentrationState> {
    if n_clusters == 0 || n_units == 0 {
        return Err(Error::input("concentration update needs M >= 1 and N >= 1"));
    }
    let beta = Beta::new(conc.alpha + 1.0, n_units as f64)
        .map_err(|e| Error::input(format!("auxiliary Beta: {e}")))?;
    // log(x) = -inf would make the rate infinite; draw again.
    let x = loop {
        let x: f64 = beta.sample(rng);
        if x > 0.0 && x.ln().is_finite() {
            break x;
        }
    };
    let rate = cfg.b_alpha - x.ln();
    let (odds, mut weight) = concentration_mixing_weight(cfg, n_clusters, n_units, x);
    if fault == Fault::AlphaOddsDenominator {
        let wrong = odds * n_units as f64;
        weight = wrong / (1.0 + wrong);
    }
    let shape = if rng.random::<f64>() < weight {
        cfg.a_alpha + n_clusters as f64
    } else {
        cfg.a_alpha + n_clusters as f64 - 1.0
    };
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::input(format!("concentration Gamma: {e}")))?;
    let alpha = loop {
        let a: f64 = gamma.sample(rng);
        if a > 0.0 {
            break a;
        }
    };
    Ok(ConcentrationState { alpha })
}

/// All set partitions of `n` items as first-appearance label vectors
/// (restricted growth strings), in lexicographic order.
pub fn enumerate_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let limit = if prefix.is_empty() { 0 } else { max + 1 };
        for s in 0..=limit {
            prefix.push(s);
            rec(prefix, max.max(s), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(&mut Vec::with_capacity(n), 0, n, &mut out);
    }
    out
}
