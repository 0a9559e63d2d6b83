//! Conjugate Gaussian updates for the cluster coefficients and the global
//! coefficients under Pólya-Gamma augmentation.
//!
//! For a fixed category `j` the multinomial likelihood reduces to a binomial
//! logit in `eta = psi_j - C_j`, where `C_j` is the log-sum-exp of the other
//! linear predictors. Given `omega ~ PG(n, eta)` the likelihood is Gaussian in
//! the coefficients, with precision `sum X' Omega X` and linear term
//! `sum X' (kappa + Omega C)`.
//!
//! Both updates form the joint Gaussian over a stacked coefficient vector and
//! then condition on the block that stays fixed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fill_linear_predictor, leave_one_out_offset, ClusterState, Dimensions, GlobalCoefficients, PanelData};
use crate::polya_gamma::sample_pg_unchecked;
use crate::sampler::Fault;

/// Independent normal priors on every coefficient.
///
/// Means and variances are stored row-major over `(covariate, free category)`
/// for the cluster blocks (base measure) and for the global coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub n_cluster_covariates: usize,
    pub n_global_covariates: usize,
    pub n_free_categories: usize,
    pub cluster_mean: Vec<f64>,
    pub cluster_var: Vec<f64>,
    pub global_mean: Vec<f64>,
    pub global_var: Vec<f64>,
}

impl PriorSpec {
    /// Same mean and variance for every coefficient.
    pub fn isotropic(n_cluster_covariates: usize, n_global_covariates: usize, n_free: usize, mean: f64, var: f64) -> Self {
        let nc = n_cluster_covariates * n_free;
        let ng = n_global_covariates * n_free;
        PriorSpec {
            n_cluster_covariates,
            n_global_covariates,
            n_free_categories: n_free,
            cluster_mean: vec![mean; nc],
            cluster_var: vec![var; nc],
            global_mean: vec![mean; ng],
            global_var: vec![var; ng],
        }
    }

    /// Standard normal priors sized for `dims`.
    pub fn standard(dims: &Dimensions) -> Self {
        Self::isotropic(
            dims.n_cluster_covariates,
            dims.n_global_covariates,
            dims.n_free_categories(),
            0.0,
            1.0,
        )
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        if self.n_cluster_covariates != dims.n_cluster_covariates
            || self.n_global_covariates != dims.n_global_covariates
            || self.n_free_categories != dims.n_free_categories()
        {
            return Err(Error::config(format!(
                "prior is sized for ({}, {}, {}) but data has ({}, {}, {})",
                self.n_cluster_covariates,
                self.n_global_covariates,
                self.n_free_categories,
                dims.n_cluster_covariates,
                dims.n_global_covariates,
                dims.n_free_categories()
            )));
        }
        let nc = self.n_cluster_covariates * self.n_free_categories;
        let ng = self.n_global_covariates * self.n_free_categories;
        if self.cluster_mean.len() != nc
            || self.cluster_var.len() != nc
            || self.global_mean.len() != ng
            || self.global_var.len() != ng
        {
            return Err(Error::config("prior vectors have the wrong length"));
        }
        let bad = |v: &f64| !(*v > 0.0 && v.is_finite());
        if self.cluster_var.iter().chain(&self.global_var).any(bad) {
            return Err(Error::config("prior variances must be strictly positive"));
        }
        if self.cluster_mean.iter().chain(&self.global_mean).any(|v| !v.is_finite()) {
            return Err(Error::config("prior means must be finite"));
        }
        Ok(())
    }

    fn column(mean: &[f64], var: &[f64], rows: usize, cols: usize, j: usize) -> DiagonalGaussian {
        DiagonalGaussian {
            mean: DVector::from_iterator(rows, (0..rows).map(|k| mean[k * cols + j])),
            var: DVector::from_iterator(rows, (0..rows).map(|k| var[k * cols + j])),
        }
    }

    /// Base-measure marginal of one cluster block's category-`j` column.
    pub fn cluster_category(&self, j: usize) -> DiagonalGaussian {
        Self::column(
            &self.cluster_mean,
            &self.cluster_var,
            self.n_cluster_covariates,
            self.n_free_categories,
            j,
        )
    }

    /// Prior marginal of the global coefficients for category `j`.
    pub fn global_category(&self, j: usize) -> DiagonalGaussian {
        Self::column(
            &self.global_mean,
            &self.global_var,
            self.n_global_covariates,
            self.n_free_categories,
            j,
        )
    }

    fn draw_matrix<R: Rng + ?Sized>(mean: &[f64], var: &[f64], rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows, cols);
        for k in 0..rows {
            for j in 0..cols {
                let z: f64 = rng.sample(StandardNormal);
                m[(k, j)] = mean[k * cols + j] + var[k * cols + j].sqrt() * z;
            }
        }
        m
    }

    /// A fresh cluster block from the base measure.
    pub fn draw_cluster_block<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        Self::draw_matrix(
            &self.cluster_mean,
            &self.cluster_var,
            self.n_cluster_covariates,
            self.n_free_categories,
            rng,
        )
    }

    /// Global coefficients from their prior.
    pub fn draw_global<R: Rng + ?Sized>(&self, rng: &mut R) -> GlobalCoefficients {
        GlobalCoefficients {
            theta: Self::draw_matrix(
                &self.global_mean,
                &self.global_var,
                self.n_global_covariates,
                self.n_free_categories,
                rng,
            ),
        }
    }
}

/// A diagonal-covariance Gaussian, used for prior blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

impl DiagonalGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Block-diagonal stacking of several independent blocks.
    pub fn stack<'a>(blocks: impl IntoIterator<Item = &'a DiagonalGaussian>) -> DiagonalGaussian {
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for b in blocks {
            mean.extend(b.mean.iter());
            var.extend(b.var.iter());
        }
        DiagonalGaussian {
            mean: DVector::from_vec(mean),
            var: DVector::from_vec(var),
        }
    }
}

/// Pólya-Gamma auxiliaries for one category over a set of cells.
///
/// Cells with zero trials carry no information and are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct PgAuxiliaries {
    /// `(unit, period)` of each row.
    pub cells: Vec<(usize, usize)>,
    pub omega: Vec<f64>,
    /// `y - n/2`.
    pub kappa: Vec<f64>,
    /// Leave-one-out offset `C`.
    pub offset: Vec<f64>,
}

impl PgAuxiliaries {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Working response `kappa / omega`, with omega floored at `1e-12`.
    pub fn pseudo_response(&self) -> Vec<f64> {
        self.kappa
            .iter()
            .zip(&self.omega)
            .map(|(k, w)| k / w.max(1e-12))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_diagonal(prior: &DiagonalGaussian) -> Self {
        GaussianMoments {
            mean: prior.mean.clone(),
            covariance: DMatrix::from_diagonal(&prior.var),
        }
    }

    /// Draws `mean + L z` with `L` the (jittered) Cholesky factor.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        if self.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let chol = robust_cholesky(self.covariance.clone(), "sampling covariance")?;
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok(&self.mean + chol.l() * z)
    }
}

/// Cholesky with scale-aware jitter: on failure add `1e-10 * trace / dim` to
/// the diagonal and retry, at most three times.
pub fn robust_cholesky(mut m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let dim = m.nrows();
    if dim == 0 {
        return Cholesky::new(m).ok_or_else(|| Error::Numerical {
            context: String::new(),
            message: format!("{what}: empty matrix"),
        });
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let trace = m.trace();
    let jitter = 1e-10 * (trace / dim as f64).abs().max(f64::MIN_POSITIVE);
    for _ in 0..3 {
        for k in 0..dim {
            m[(k, k)] += jitter;
        }
        if let Some(c) = Cholesky::new(m.clone()) {
            return Ok(c);
        }
    }
    let min_diag = (0..dim).map(|k| m[(k, k)]).fold(f64::INFINITY, f64::min);
    Err(Error::Numerical {
        context: String::new(),
        message: format!(
            "{what}: {dim}x{dim} matrix not positive definite after jitter \
             (trace {trace:.3e}, smallest diagonal {min_diag:.3e}, finite: {})",
            m.iter().all(|v| v.is_finite())
        ),
    })
}

/// Row access for the design matrices used in the Gaussian updates.
pub trait DesignRows {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// Writes the non-zero `(column, value)` pairs of row `r` into `buf`.
    fn row(&self, r: usize, buf: &mut Vec<(usize, f64)>);
}

impl DesignRows for DMatrix<f64> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }

    fn n_cols(&self) -> usize {
        self.ncols()
    }

    fn row(&self, r: usize, buf: &mut Vec<(usize, f64)>) {
        buf.clear();
        buf.extend((0..self.ncols()).map(|c| (c, self[(r, c)])).filter(|&(_, v)| v != 0.0));
    }
}

/// The concatenated design `[X^c X^nc]` restricted to a list of cells.
pub struct StackedDesign<'a> {
    pub data: &'a PanelData,
    pub cells: &'a [(usize, usize)],
}

impl DesignRows for StackedDesign<'_> {
    fn n_rows(&self) -> usize {
        self.cells.len()
    }

    fn n_cols(&self) -> usize {
        let d = self.data.dims();
        d.n_cluster_covariates + d.n_global_covariates
    }

    fn row(&self, r: usize, buf: &mut Vec<(usize, f64)>) {
        let (i, t) = self.cells[r];
        let xc = self.data.x_cluster(i, t);
        buf.clear();
        buf.extend(xc.iter().copied().enumerate());
        buf.extend(self.data.x_global(i, t).iter().enumerate().map(|(k, &v)| (xc.len() + k, v)));
    }
}

/// The block design `X^L`: each row carries its cluster covariates in the
/// column block of its cluster and the global covariates in a trailing shared
/// block. Stored as per-row cluster ids, never densified.
#[derive(Debug, Clone)]
pub struct BlockDesign<'a> {
    data: &'a PanelData,
    cells: Vec<(usize, usize)>,
    cluster_of_row: Vec<usize>,
    n_clusters: usize,
}

impl<'a> BlockDesign<'a> {
    /// Column count `M (K^c + 1) + K^nc`.
    pub fn n_columns(&self) -> usize {
        let d = self.data.dims();
        self.n_clusters * d.n_cluster_covariates + d.n_global_covariates
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// Column indices of the cluster blocks (`L_beta`).
    pub fn cluster_columns(&self) -> std::ops::Range<usize> {
        0..self.n_clusters * self.data.dims().n_cluster_covariates
    }

    /// Column indices of the shared global block (`L_theta`).
    pub fn global_columns(&self) -> std::ops::Range<usize> {
        self.cluster_columns().end..self.n_columns()
    }

    /// Dense copy, for small problems and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.cells.len(), self.n_columns());
        let mut buf = Vec::new();
        for r in 0..self.cells.len() {
            self.row(r, &mut buf);
            for &(c, v) in &buf {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Coefficient vector `phi` for category `j` stacked in column order:
    /// cluster blocks by label, then the global coefficients.
    pub fn stacked_coefficients(&self, state: &ClusterState, theta: &GlobalCoefficients, j: usize) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_columns());
        for block in &state.beta_star {
            v.extend(block.column(j).iter());
        }
        v.extend(theta.theta.column(j).iter());
        DVector::from_vec(v)
    }
}

impl DesignRows for BlockDesign<'_> {
    fn n_rows(&self) -> usize {
        self.cells.len()
    }

    fn n_cols(&self) -> usize {
        self.n_columns()
    }

    fn row(&self, r: usize, buf: &mut Vec<(usize, f64)>) {
        let (i, t) = self.cells[r];
        let kc = self.data.dims().n_cluster_covariates;
        let start = self.cluster_of_row[r] * kc;
        let shared = self.n_clusters * kc;
        buf.clear();
        buf.extend(self.data.x_cluster(i, t).iter().enumerate().map(|(k, &v)| (start + k, v)));
        buf.extend(self.data.x_global(i, t).iter().enumerate().map(|(k, &v)| (shared + k, v)));
    }
}

/// Builds `X^L` over every `(unit, period)` cell in unit-major order.
pub fn build_block_design<'a>(data: &'a PanelData, state: &ClusterState) -> BlockDesign<'a> {
    let cells = all_cells(data);
    let cluster_of_row = cells.iter().map(|&(i, _)| state.assignments[i]).collect();
    BlockDesign {
        data,
        cells,
        cluster_of_row,
        n_clusters: state.n_clusters(),
    }
}

/// `X^L` restricted to the cells of an existing auxiliary set.
fn block_design_for<'a>(data: &'a PanelData, state: &ClusterState, cells: &[(usize, usize)]) -> BlockDesign<'a> {
    BlockDesign {
        data,
        cells: cells.to_vec(),
        cluster_of_row: cells.iter().map(|&(i, _)| state.assignments[i]).collect(),
        n_clusters: state.n_clusters(),
    }
}

fn all_cells(data: &PanelData) -> Vec<(usize, usize)> {
    (0..data.n_units())
        .flat_map(|i| (0..data.n_periods()).map(move |t| (i, t)))
        .collect()
}

/// Draws `omega ~ PG(n, eta)` with `eta = psi_j - C` for every cell of the
/// listed units, using the current coefficients.
pub fn draw_pg_auxiliaries<R: Rng + ?Sized>(
    data: &PanelData,
    units: &[usize],
    j: usize,
    state: &ClusterState,
    theta: &GlobalCoefficients,
    rng: &mut R,
) -> Result<PgAuxiliaries> {
    draw_pg_auxiliaries_with(data, units, j, state, theta, Fault::None, rng)
}

pub(crate) fn draw_pg_auxiliaries_with<R: Rng + ?Sized>(
    data: &PanelData,
    units: &[usize],
    j: usize,
    state: &ClusterState,
    theta: &GlobalCoefficients,
    fault: Fault,
    rng: &mut R,
) -> Result<PgAuxiliaries> {
    pg_auxiliaries(data, units, j, |i| state.unit_beta(i), theta, fault, rng)
}

fn pg_auxiliaries<'b, R: Rng + ?Sized>(
    data: &PanelData,
    units: &[usize],
    j: usize,
    beta_of: impl Fn(usize) -> &'b DMatrix<f64>,
    theta: &GlobalCoefficients,
    fault: Fault,
    rng: &mut R,
) -> Result<PgAuxiliaries> {
    if j + 1 >= data.n_categories() {
        return Err(Error::config(format!(
            "category {j} is the baseline or out of range (J = {})",
            data.n_categories()
        )));
    }
    let cap = units.len() * data.n_periods();
    let mut aux = PgAuxiliaries {
        cells: Vec::with_capacity(cap),
        omega: Vec::with_capacity(cap),
        kappa: Vec::with_capacity(cap),
        offset: Vec::with_capacity(cap),
    };
    let mut psi = vec![0.0; data.n_categories()];
    for &i in units {
        let beta = beta_of(i);
        for t in 0..data.n_periods() {
            let n = data.trials(i, t);
            if n == 0 {
                continue;
            }
            fill_linear_predictor(data.x_cluster(i, t), data.x_global(i, t), beta, &theta.theta, &mut psi);
            let c = leave_one_out_offset(&psi, j);
            let eta = psi[j] - c;
            if !eta.is_finite() {
                return Err(Error::Numerical {
                    context: format!("unit {i}, period {t}, category {j}"),
                    message: format!("non-finite linear predictor {eta}"),
                });
            }
            let y = data.counts(i, t)[j] as f64;
            let kappa = match fault {
                Fault::KappaOffset => y - n as f64,
                _ => y - 0.5 * n as f64,
            };
            aux.cells.push((i, t));
            aux.omega.push(sample_pg_unchecked(n, eta, rng));
            aux.kappa.push(kappa);
            aux.offset.push(c);
        }
    }
    Ok(aux)
}

/// Joint Gaussian posterior of a coefficient vector given auxiliaries:
/// precision `X' Omega X + Sigma0^-1`, mean solving
/// `precision * mu = X' (kappa + Omega C) + Sigma0^-1 mu0`.
pub fn joint_posterior_moments<D: DesignRows + ?Sized>(
    design: &D,
    aux: &PgAuxiliaries,
    prior: &DiagonalGaussian,
) -> Result<GaussianMoments> {
    let p = design.n_cols();
    if prior.dim() != p {
        return Err(Error::config(format!(
            "prior has dimension {}, design has {p} columns",
            prior.dim()
        )));
    }
    if design.n_rows() != aux.len() {
        return Err(Error::config(format!(
            "design has {} rows, auxiliaries {}",
            design.n_rows(),
            aux.len()
        )));
    }
    let mut precision = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for k in 0..p {
        precision[(k, k)] = 1.0 / prior.var[k];
        rhs[k] = prior.mean[k] / prior.var[k];
    }
    let mut buf = Vec::new();
    for r in 0..design.n_rows() {
        design.row(r, &mut buf);
        let w = aux.omega[r];
        let b = aux.kappa[r] + w * aux.offset[r];
        for &(a, va) in &buf {
            rhs[a] += va * b;
            let wa = w * va;
            for &(c, vc) in &buf {
                precision[(a, c)] += wa * vc;
            }
        }
    }
    let chol = robust_cholesky(precision, "posterior precision")?;
    let mean = chol.solve(&rhs);
    let mut covariance = chol.inverse();
    symmetrize(&mut covariance);
    Ok(GaussianMoments { mean, covariance })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in a + 1..n {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Conditions a Gaussian on the coordinates outside `keep`:
/// `N(mu_a + S_ab S_bb^-1 (x_b - mu_b), S_aa - S_ab S_bb^-1 S_ba)`.
///
/// `given` lists the values of the complement in ascending index order.
pub fn conditional_gaussian(moments: &GaussianMoments, keep: &[usize], given: &DVector<f64>) -> Result<GaussianMoments> {
    let p = moments.dim();
    let mut in_keep = vec![false; p];
    for &k in keep {
        if k >= p || in_keep[k] {
            return Err(Error::config(format!("bad or repeated index {k} in conditioning set")));
        }
        in_keep[k] = true;
    }
    let rest: Vec<usize> = (0..p).filter(|&k| !in_keep[k]).collect();
    if given.len() != rest.len() {
        return Err(Error::config(format!(
            "{} conditioning values for {} coordinates",
            given.len(),
            rest.len()
        )));
    }
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| moments.covariance[(rows[r], cols[c])]);
    let mu_a = DVector::from_iterator(keep.len(), keep.iter().map(|&k| moments.mean[k]));
    let s_aa = sub(keep, keep);
    if rest.is_empty() {
        return Ok(GaussianMoments {
            mean: mu_a,
            covariance: s_aa,
        });
    }
    let mu_b = DVector::from_iterator(rest.len(), rest.iter().map(|&k| moments.mean[k]));
    let s_bb = sub(&rest, &rest);
    let s_ba = sub(&rest, keep);
    let chol = robust_cholesky(s_bb, "conditioning block")?;
    // gain = S_bb^-1 S_ba
    let gain = chol.solve(&s_ba);
    let mean = mu_a + gain.transpose() * (given - mu_b);
    let mut covariance = s_aa - s_ba.transpose() * gain;
    symmetrize(&mut covariance);
    Ok(GaussianMoments { mean, covariance })
}

/// Conditional moments of cluster `c`'s category-`j` coefficients given
/// `theta[:, j]`, from the joint over `(beta block, theta)` on the cluster's
/// cells.
pub fn beta_cluster_moments(
    data: &PanelData,
    j: usize,
    theta: &GlobalCoefficients,
    prior: &PriorSpec,
    aux: &PgAuxiliaries,
) -> Result<GaussianMoments> {
    let kc = data.dims().n_cluster_covariates;
    let joint_prior = DiagonalGaussian::stack([&prior.cluster_category(j), &prior.global_category(j)]);
    let design = StackedDesign {
        data,
        cells: &aux.cells,
    };
    let joint = joint_posterior_moments(&design, aux, &joint_prior)?;
    let keep: Vec<usize> = (0..kc).collect();
    conditional_gaussian(&joint, &keep, &theta.theta.column(j).into_owned())
}

/// Conditional moments of `theta[:, j]` given all cluster blocks, from the
/// joint over the block-design coefficient vector.
pub fn theta_moments(
    data: &PanelData,
    j: usize,
    state: &ClusterState,
    theta: &GlobalCoefficients,
    prior: &PriorSpec,
    aux: &PgAuxiliaries,
) -> Result<GaussianMoments> {
    let design = block_design_for(data, state, &aux.cells);
    let cluster_prior = prior.cluster_category(j);
    let global_prior = prior.global_category(j);
    let joint_prior = DiagonalGaussian::stack(
        std::iter::repeat_n(&cluster_prior, state.n_clusters()).chain(std::iter::once(&global_prior)),
    );
    let joint = joint_posterior_moments(&design, aux, &joint_prior)?;
    let phi = design.stacked_coefficients(state, theta, j);
    let fixed = design.cluster_columns();
    let given = phi.rows(0, fixed.end).into_owned();
    let keep: Vec<usize> = design.global_columns().collect();
    conditional_gaussian(&joint, &keep, &given)
}

/// Gibbs update of `beta*[c][:, j]`: fresh auxiliaries on the cluster's
/// cells, then a draw from the conditional given `theta`.
#[allow(clippy::too_many_arguments)]
pub fn sample_beta_cluster<R: Rng + ?Sized>(
    data: &PanelData,
    c: usize,
    j: usize,
    state: &mut ClusterState,
    theta: &GlobalCoefficients,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    let members = state.members(c);
    sample_beta_cluster_with(data, c, &members, j, state, theta, prior, Fault::None, rng)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_beta_cluster_with<R: Rng + ?Sized>(
    data: &PanelData,
    c: usize,
    members: &[usize],
    j: usize,
    state: &mut ClusterState,
    theta: &GlobalCoefficients,
    prior: &PriorSpec,
    fault: Fault,
    rng: &mut R,
) -> Result<()> {
    if c >= state.n_clusters() || state.sizes[c] == 0 {
        return Err(Error::config(format!("cluster {c} is empty or missing")));
    }
    let draw = draw_beta_column(data, members, &state.beta_star[c], j, theta, prior, fault, rng)?;
    state.beta_star[c].set_column(j, &draw);
    Ok(())
}

/// New category-`j` column for a block shared by `members`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn draw_beta_column<R: Rng + ?Sized>(
    data: &PanelData,
    members: &[usize],
    block: &DMatrix<f64>,
    j: usize,
    theta: &GlobalCoefficients,
    prior: &PriorSpec,
    fault: Fault,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let aux = pg_auxiliaries(data, members, j, |_| block, theta, fault, rng)?;
    let moments = beta_cluster_moments(data, j, theta, prior, &aux)?;
    moments.sample(rng)
}

/// Gibbs update of `theta[:, j]`: fresh auxiliaries on every cell, then a
/// draw from the block-design conditional given the cluster blocks.
pub fn sample_theta<R: Rng + ?Sized>(
    data: &PanelData,
    j: usize,
    state: &ClusterState,
    theta: &mut GlobalCoefficients,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<()> {
    sample_theta_with(data, j, state, theta, prior, Fault::None, rng)
}

pub(crate) fn sample_theta_with<R: Rng + ?Sized>(
    data: &PanelData,
    j: usize,
    state: &ClusterState,
    theta: &mut GlobalCoefficients,
    prior: &PriorSpec,
    fault: Fault,
    rng: &mut R,
) -> Result<()> {
    if data.dims().n_global_covariates == 0 {
        return Ok(());
    }
    let units: Vec<usize> = (0..data.n_units()).collect();
    let aux = draw_pg_auxiliaries_with(data, &units, j, state, theta, fault, rng)?;
    let moments = theta_moments(data, j, state, theta, prior, &aux)?;
    let draw = moments.sample(rng)?;
    theta.theta.set_column(j, &draw);
    Ok(())
}
