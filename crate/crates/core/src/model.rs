//! Panel data model and the multinomial-logit kernel.
//!
//! Category `J` (the last one) is the baseline: its linear predictor is fixed
//! at zero and its coefficients are never stored. All coefficient blocks are
//! therefore `(covariates) x (J - 1)` matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of a panel. `n_cluster_covariates` counts the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n_units: usize,
    pub n_periods: usize,
    pub n_categories: usize,
    pub n_cluster_covariates: usize,
    pub n_global_covariates: usize,
}

impl Dimensions {
    /// Number of non-baseline categories, `J - 1`.
    pub fn n_free_categories(&self) -> usize {
        self.n_categories - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::config("panel needs at least one unit"));
        }
        if self.n_categories < 2 {
            return Err(Error::config("need at least two categories"));
        }
        if self.n_cluster_covariates == 0 {
            return Err(Error::config(
                "cluster covariates must include the intercept column",
            ));
        }
        Ok(())
    }
}

/// Human-readable names carried alongside the numeric arrays.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelLabels {
    pub unit_ids: Vec<String>,
    pub period_labels: Vec<String>,
    pub category_names: Vec<String>,
    pub cluster_covariate_names: Vec<String>,
    pub global_covariate_names: Vec<String>,
}

impl PanelLabels {
    /// Generic labels (`u1`, `t1`, `cat1`, `intercept`, `xc1`, `xg1`, ...).
    pub fn generic(dims: &Dimensions) -> Self {
        let mut cluster = vec!["intercept".to_string()];
        cluster.extend((1..dims.n_cluster_covariates).map(|k| format!("xc{k}")));
        PanelLabels {
            unit_ids: (1..=dims.n_units).map(|i| format!("u{i}")).collect(),
            period_labels: (1..=dims.n_periods).map(|t| format!("t{t}")).collect(),
            category_names: (1..=dims.n_categories).map(|j| format!("cat{j}")).collect(),
            cluster_covariate_names: cluster,
            global_covariate_names: (1..=dims.n_global_covariates)
                .map(|k| format!("xg{k}"))
                .collect(),
        }
    }
}

/// Responses and covariates of a balanced panel, stored row-major by
/// `(unit, period, ...)`.
///
/// Immutable apart from [`PanelData::set_counts`], which the calibration
/// tests use to regenerate responses in place.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    dims: Dimensions,
    trials: Vec<u32>,
    y: Vec<u32>,
    x_cluster: Vec<f64>,
    x_global: Vec<f64>,
    labels: PanelLabels,
}

impl PanelData {
    /// Builds a panel and checks every invariant: counts sum to trials,
    /// the intercept column is exactly one, all covariates are finite.
    pub fn new(
        dims: Dimensions,
        trials: Vec<u32>,
        y: Vec<u32>,
        x_cluster: Vec<f64>,
        x_global: Vec<f64>,
        labels: PanelLabels,
    ) -> Result<Self> {
        dims.validate()?;
        let cells = dims.n_units * dims.n_periods;
        let expect = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::config(format!("{name}: expected {want} entries, got {got}")))
            } else {
                Ok(())
            }
        };
        expect("trials", trials.len(), cells)?;
        expect("y", y.len(), cells * dims.n_categories)?;
        expect("x_cluster", x_cluster.len(), cells * dims.n_cluster_covariates)?;
        expect("x_global", x_global.len(), cells * dims.n_global_covariates)?;
        expect("unit_ids", labels.unit_ids.len(), dims.n_units)?;
        expect("period_labels", labels.period_labels.len(), dims.n_periods)?;
        expect("category_names", labels.category_names.len(), dims.n_categories)?;
        expect(
            "cluster_covariate_names",
            labels.cluster_covariate_names.len(),
            dims.n_cluster_covariates,
        )?;
        expect(
            "global_covariate_names",
            labels.global_covariate_names.len(),
            dims.n_global_covariates,
        )?;

        let data = PanelData {
            dims,
            trials,
            y,
            x_cluster,
            x_global,
            labels,
        };
        data.check_counts()?;
        for cell in 0..cells {
            let row = &data.x_cluster[cell * dims.n_cluster_covariates..][..dims.n_cluster_covariates];
            if row[0] != 1.0 {
                return Err(Error::input(format!(
                    "intercept column must be 1 (cell {cell} has {})",
                    row[0]
                )));
            }
        }
        if data.x_cluster.iter().chain(&data.x_global).any(|v| !v.is_finite()) {
            return Err(Error::input("covariates contain non-finite values"));
        }
        Ok(data)
    }

    fn check_counts(&self) -> Result<()> {
        let j = self.dims.n_categories;
        for (cell, &n) in self.trials.iter().enumerate() {
            let total: u64 = self.y[cell * j..][..j].iter().map(|&v| v as u64).sum();
            if total != n as u64 {
                return Err(Error::input(format!(
                    "counts in cell {cell} sum to {total}, expected {n} trials"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &Dimensions {
        &self.dims
    }

    pub fn labels(&self) -> &PanelLabels {
        &self.labels
    }

    pub fn n_units(&self) -> usize {
        self.dims.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.dims.n_periods
    }

    pub fn n_categories(&self) -> usize {
        self.dims.n_categories
    }

    #[inline]
    fn cell(&self, i: usize, t: usize) -> usize {
        i * self.dims.n_periods + t
    }

    #[inline]
    pub fn trials(&self, i: usize, t: usize) -> u32 {
        self.trials[self.cell(i, t)]
    }

    #[inline]
    pub fn counts(&self, i: usize, t: usize) -> &[u32] {
        let j = self.dims.n_categories;
        &self.y[self.cell(i, t) * j..][..j]
    }

    #[inline]
    pub fn x_cluster(&self, i: usize, t: usize) -> &[f64] {
        let k = self.dims.n_cluster_covariates;
        &self.x_cluster[self.cell(i, t) * k..][..k]
    }

    #[inline]
    pub fn x_global(&self, i: usize, t: usize) -> &[f64] {
        let k = self.dims.n_global_covariates;
        &self.x_global[self.cell(i, t) * k..][..k]
    }

    /// Replaces all response counts; trials stay fixed.
    pub fn set_counts(&mut self, y: Vec<u32>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(Error::config("replacement counts have the wrong length"));
        }
        let old = std::mem::replace(&mut self.y, y);
        if let Err(e) = self.check_counts() {
            self.y = old;
            return Err(e);
        }
        Ok(())
    }
}

/// Cluster allocations and the unique coefficient blocks.
///
/// Labels are zero-based and contiguous (`0..n_clusters`). `beta_star[c]` is
/// the `(K^c + 1) x (J - 1)` block of cluster `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    pub beta_star: Vec<DMatrix<f64>>,
}

impl ClusterState {
    /// Everybody in one cluster with an all-zero coefficient block.
    pub fn single_cluster(n_units: usize, n_cluster_covariates: usize, n_free: usize) -> Self {
        ClusterState {
            assignments: vec![0; n_units],
            sizes: vec![n_units],
            beta_star: vec![DMatrix::zeros(n_cluster_covariates, n_free)],
        }
    }

    /// Builds a state from labels and blocks, recomputing sizes. Labels must
    /// already be contiguous.
    pub fn from_parts(assignments: Vec<usize>, beta_star: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut sizes = vec![0usize; beta_star.len()];
        for &s in &assignments {
            if s >= sizes.len() {
                return Err(Error::input(format!(
                    "label {s} has no coefficient block ({} blocks)",
                    sizes.len()
                )));
            }
            sizes[s] += 1;
        }
        let state = ClusterState {
            assignments,
            sizes,
            beta_star,
        };
        state.check_invariants()?;
        Ok(state)
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_units(&self) -> usize {
        self.assignments.len()
    }

    /// Coefficient block used by unit `i`.
    pub fn unit_beta(&self, i: usize) -> &DMatrix<f64> {
        &self.beta_star[self.assignments[i]]
    }

    /// Units currently in cluster `c`, in index order.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == c).then_some(i))
            .collect()
    }

    /// Size bookkeeping, contiguity, non-empty clusters and block count.
    pub fn check_invariants(&self) -> Result<()> {
        let m = self.sizes.len();
        if self.beta_star.len() != m {
            return Err(Error::input(format!(
                "{} coefficient blocks for {m} clusters",
                self.beta_star.len()
            )));
        }
        let mut counted = vec![0usize; m];
        for &s in &self.assignments {
            if s >= m {
                return Err(Error::input(format!("label {s} out of range 0..{m}")));
            }
            counted[s] += 1;
        }
        if counted != self.sizes {
            return Err(Error::input(format!(
                "size bookkeeping {:?} disagrees with assignments {:?}",
                self.sizes, counted
            )));
        }
        if let Some(c) = counted.iter().position(|&n| n == 0) {
            return Err(Error::input(format!("cluster {c} is empty")));
        }
        if self.sizes.iter().sum::<usize>() != self.assignments.len() {
            return Err(Error::input("cluster sizes do not sum to N"));
        }
        Ok(())
    }

    fn check_against(&self, dims: &Dimensions) -> Result<()> {
        if self.assignments.len() != dims.n_units {
            return Err(Error::config(format!(
                "state has {} units, data has {}",
                self.assignments.len(),
                dims.n_units
            )));
        }
        for b in &self.beta_star {
            if b.nrows() != dims.n_cluster_covariates || b.ncols() != dims.n_free_categories() {
                return Err(Error::config(format!(
                    "coefficient block is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    dims.n_cluster_covariates,
                    dims.n_free_categories()
                )));
            }
        }
        Ok(())
    }
}

/// Coefficients shared by all units: `K^nc x (J - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCoefficients {
    pub theta: DMatrix<f64>,
}

impl GlobalCoefficients {
    pub fn zeros(n_global_covariates: usize, n_free: usize) -> Self {
        GlobalCoefficients {
            theta: DMatrix::zeros(n_global_covariates, n_free),
        }
    }

    fn check_against(&self, dims: &Dimensions) -> Result<()> {
        if self.theta.nrows() != dims.n_global_covariates
            || self.theta.ncols() != dims.n_free_categories()
        {
            return Err(Error::config(format!(
                "theta is {}x{}, expected {}x{}",
                self.theta.nrows(),
                self.theta.ncols(),
                dims.n_global_covariates,
                dims.n_free_categories()
            )));
        }
        Ok(())
    }
}

/// Checks that state and global coefficients fit the panel.
pub fn check_consistent(
    data: &PanelData,
    state: &ClusterState,
    theta: &GlobalCoefficients,
) -> Result<()> {
    state.check_against(data.dims())?;
    theta.check_against(data.dims())
}

/// Writes `x_c . beta[:, j] + x_nc . theta[:, j]` for `j < J - 1` into `out`
/// and sets the baseline entry to zero.
#[inline]
pub(crate) fn fill_linear_predictor(
    x_cluster: &[f64],
    x_global: &[f64],
    beta: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    out: &mut [f64],
) {
    let free = out.len() - 1;
    for (j, slot) in out.iter_mut().take(free).enumerate() {
        let mut acc = 0.0;
        for (k, &x) in x_cluster.iter().enumerate() {
            acc += x * beta[(k, j)];
        }
        for (k, &x) in x_global.iter().enumerate() {
            acc += x * theta[(k, j)];
        }
        *slot = acc;
    }
    out[free] = 0.0;
}

/// Linear predictor `psi` of unit `i` at period `t`, length `J`, with the
/// baseline entry exactly zero.
pub fn linear_predictor(
    data: &PanelData,
    state: &ClusterState,
    theta: &GlobalCoefficients,
    i: usize,
    t: usize,
) -> Result<Vec<f64>> {
    check_consistent(data, state, theta)?;
    if i >= data.n_units() || t >= data.n_periods() {
        return Err(Error::config(format!("cell ({i}, {t}) outside the panel")));
    }
    let mut psi = vec![0.0; data.n_categories()];
    fill_linear_predictor(
        data.x_cluster(i, t),
        data.x_global(i, t),
        state.unit_beta(i),
        &theta.theta,
        &mut psi,
    );
    Ok(psi)
}

/// Max-subtracted `log(sum(exp(v)))`.
#[inline]
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Soft-max of `psi`.
pub fn category_probabilities(psi: &[f64]) -> Vec<f64> {
    let max = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = psi.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `log sum_{l != j} exp(psi_l)`, the offset `C` of the binary reduction for
/// category `j`.
pub fn leave_one_out_offset(psi: &[f64], j: usize) -> f64 {
    let max = psi
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != j)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = psi
        .iter()
        .enumerate()
        .filter(|&(l, _)| l != j)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    max + sum.ln()
}

/// Log-likelihood of one cell given a coefficient block, without the
/// multinomial coefficient.
#[inline]
pub(crate) fn cell_log_likelihood(
    data: &PanelData,
    i: usize,
    t: usize,
    beta: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    psi: &mut [f64],
) -> f64 {
    let n = data.trials(i, t);
    if n == 0 {
        return 0.0;
    }
    fill_linear_predictor(data.x_cluster(i, t), data.x_global(i, t), beta, theta, psi);
    let lse = log_sum_exp(psi);
    data.counts(i, t)
        .iter()
        .zip(psi.iter())
        .map(|(&y, &v)| y as f64 * (v - lse))
        .sum()
}

/// Log-likelihood of unit `i` under an arbitrary coefficient block.
pub fn unit_log_likelihood_with(
    data: &PanelData,
    i: usize,
    beta: &DMatrix<f64>,
    theta: &GlobalCoefficients,
) -> f64 {
    let mut psi = vec![0.0; data.n_categories()];
    let mut total = 0.0;
    for t in 0..data.n_periods() {
        total += cell_log_likelihood(data, i, t, beta, &theta.theta, &mut psi);
    }
    total
}

/// `sum_t sum_j y_itj log p_itj` for unit `i`.
///
/// The multinomial coefficient is omitted: it does not depend on the
/// coefficients, so it cancels in every allocation-weight ratio.
pub fn log_likelihood_unit(
    data: &PanelData,
    i: usize,
    state: &ClusterState,
    theta: &GlobalCoefficients,
) -> f64 {
    unit_log_likelihood_with(data, i, state.unit_beta(i), theta)
}

/// Log-likelihood of a single period of unit `i`.
pub fn log_likelihood_cell(
    data: &PanelData,
    i: usize,
    t: usize,
    state: &ClusterState,
    theta: &GlobalCoefficients,
) -> f64 {
    let mut psi = vec![0.0; data.n_categories()];
    cell_log_likelihood(data, i, t, state.unit_beta(i), &theta.theta, &mut psi)
}

/// Sum of [`log_likelihood_unit`] over all units.
pub fn log_likelihood_total(
    data: &PanelData,
    state: &ClusterState,
    theta: &GlobalCoefficients,
) -> f64 {
    (0..data.n_units())
        .map(|i| log_likelihood_unit(data, i, state, theta))
        .sum()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Random panel with standard-normal covariates and arbitrary counts.
    pub fn random_panel<R: Rng>(rng: &mut R, dims: Dimensions, max_trials: u32) -> PanelData {
        let cells = dims.n_units * dims.n_periods;
        let mut trials = Vec::with_capacity(cells);
        let mut y = Vec::with_capacity(cells * dims.n_categories);
        for _ in 0..cells {
            let n = rng.random_range(1..=max_trials);
            trials.push(n);
            let mut left = n;
            for j in 0..dims.n_categories {
                let v = if j + 1 == dims.n_categories {
                    left
                } else {
                    rng.random_range(0..=left)
                };
                left -= v;
                y.push(v);
            }
        }
        let mut x_cluster = Vec::with_capacity(cells * dims.n_cluster_covariates);
        for _ in 0..cells {
            x_cluster.push(1.0);
            for _ in 1..dims.n_cluster_covariates {
                x_cluster.push(rng.sample(StandardNormal));
            }
        }
        let x_global = (0..cells * dims.n_global_covariates)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        PanelData::new(dims, trials, y, x_cluster, x_global, PanelLabels::generic(&dims)).unwrap()
    }

    pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }
}
