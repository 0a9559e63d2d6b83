//! Posterior marginal effects of covariates on category probabilities.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::model::{category_probabilities, fill_linear_predictor, PanelData};
use crate::sampler::{ChainOutput, Draw};

/// `d p_j / d x_k = p_j (b_j - sum_l p_l b_l)`, where `b` holds the
/// covariate's coefficient for every category (baseline entry 0).
pub fn marginal_effect_point(p: &[f64], coeff: &[f64]) -> Vec<f64> {
    let mean: f64 = p.iter().zip(coeff).map(|(a, b)| a * b).sum();
    p.iter().zip(coeff).map(|(pj, bj)| pj * (bj - mean)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Cluster,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateRef {
    pub name: String,
    pub kind: CovariateKind,
    pub index: usize,
}

/// Resolves covariate names against the panel labels. An empty request
/// selects every covariate except the intercept.
pub fn select_covariates(data: &PanelData, names: &[String]) -> Result<Vec<CovariateRef>> {
    let labels = data.labels();
    let all: Vec<CovariateRef> = labels
        .cluster_covariate_names
        .iter()
        .enumerate()
        .map(|(index, name)| CovariateRef {
            name: name.clone(),
            kind: CovariateKind::Cluster,
            index,
        })
        .chain(labels.global_covariate_names.iter().enumerate().map(|(index, name)| CovariateRef {
            name: name.clone(),
            kind: CovariateKind::Global,
            index,
        }))
        .collect();
    if names.is_empty() {
        return Ok(all
            .into_iter()
            .filter(|c| !(c.kind == CovariateKind::Cluster && c.index == 0))
            .collect());
    }
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|c| &c.name == n)
                .cloned()
                .ok_or_else(|| Error::input(format!("unknown covariate '{n}'")))
        })
        .collect()
}

/// Which covariates to report and how to rescale them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EffectOptions {
    /// Covariate names; empty means all but the intercept.
    pub covariates: Vec<String>,
    /// User multipliers by covariate name (default 1).
    pub scales: BTreeMap<String, f64>,
    /// Standardisation divisors by covariate name (default 1), mapping
    /// effects back to original covariate units.
    pub standardization: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    /// Zero-based cluster label of the partition.
    pub cluster: usize,
    pub covariate: String,
    pub category: String,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    /// The 10-90% interval excludes zero.
    pub significant: bool,
    /// Multiplier applied to the raw effect.
    pub scale: f64,
}

/// Per-draw averaged effects, laid out `[cluster][covariate][category]`.
fn draw_effects(draw: &Draw, data: &PanelData, partition: &[usize], n_clusters: usize, covs: &[CovariateRef]) -> Vec<f64> {
    let j_all = data.n_categories();
    let jm1 = j_all - 1;
    let nk = covs.len();
    let mut sums = vec![0.0; n_clusters * nk * j_all];
    let mut cells = vec![0usize; n_clusters];
    let mut psi = vec![0.0; j_all];
    let mut coeff = vec![0.0; j_all];
    for i in 0..data.n_units() {
        let beta = &draw.beta_star[draw.assignments[i]];
        let c = partition[i];
        for t in 0..data.n_periods() {
            fill_linear_predictor(data.x_cluster(i, t), data.x_global(i, t), beta, &draw.theta, &mut psi);
            let p = category_probabilities(&psi);
            cells[c] += 1;
            for (k, cov) in covs.iter().enumerate() {
                for (j, b) in coeff.iter_mut().enumerate().take(jm1) {
                    *b = match cov.kind {
                        CovariateKind::Cluster => beta[(cov.index, j)],
                        CovariateKind::Global => draw.theta[(cov.index, j)],
                    };
                }
                coeff[jm1] = 0.0;
                let me = marginal_effect_point(&p, &coeff);
                let base = (c * nk + k) * j_all;
                for (s, m) in sums[base..base + j_all].iter_mut().zip(me) {
                    *s += m;
                }
            }
        }
    }
    for c in 0..n_clusters {
        if cells[c] > 0 {
            for v in &mut sums[c * nk * j_all..(c + 1) * nk * j_all] {
                *v /= cells[c] as f64;
            }
        }
    }
    sums
}

/// Averages marginal effects over the observed cells of each cluster of
/// `partition`, per draw, then summarises across draws.
///
/// Each unit uses the coefficients of its own cluster in the draw; the
/// partition only decides which cells are averaged together.
pub fn average_posterior_effects(
    chain: &ChainOutput,
    data: &PanelData,
    partition: &[usize],
    options: &EffectOptions,
) -> Result<Vec<EffectSummary>> {
    if chain.draws.is_empty() {
        return Err(Error::input("chain has no draws"));
    }
    if partition.len() != data.n_units() || chain.dims != *data.dims() {
        return Err(Error::input("partition, chain and data disagree on dimensions"));
    }
    let covs = select_covariates(data, &options.covariates)?;
    for name in options.scales.keys().chain(options.standardization.keys()) {
        if !data
            .labels()
            .cluster_covariate_names
            .iter()
            .chain(&data.labels().global_covariate_names)
            .any(|n| n == name)
        {
            return Err(Error::input(format!("unknown covariate '{name}'")));
        }
    }
    let n_clusters = partition.iter().max().map_or(0, |v| v + 1);
    let per_draw: Vec<Vec<f64>> = chain
        .draws
        .par_iter()
        .map(|d| draw_effects(d, data, partition, n_clusters, &covs))
        .collect();

    let j_all = data.n_categories();
    let nk = covs.len();
    let mut out = Vec::with_capacity(n_clusters * nk * j_all);
    let mut column = Vec::with_capacity(per_draw.len());
    for c in 0..n_clusters {
        for (k, cov) in covs.iter().enumerate() {
            let user = options.scales.get(&cov.name).copied().unwrap_or(1.0);
            let sd = options.standardization.get(&cov.name).copied().unwrap_or(1.0);
            for j in 0..j_all {
                column.clear();
                column.extend(per_draw.iter().map(|v| v[(c * nk + k) * j_all + j]));
                column.sort_by(f64::total_cmp);
                let q = |p: f64| quantile_sorted(&column, p) * user / sd;
                let (q10, q50, q90) = (q(0.1), q(0.5), q(0.9));
                out.push(EffectSummary {
                    cluster: c,
                    covariate: cov.name.clone(),
                    category: data.labels().category_names[j].clone(),
                    q10,
                    q50,
                    q90,
                    significant: q10 > 0.0 || q90 < 0.0,
                    scale: user / sd,
                });
            }
        }
    }
    Ok(out)
}
