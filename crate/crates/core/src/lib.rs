//! Bayesian nonparametric partial clustering for multinomial-logit panels.
//!
//! Units are clustered on a subset of regression coefficients through a
//! Dirichlet-process mixture, while the remaining coefficients are shared by
//! every unit. Posterior inference is by Gibbs sampling with Pólya-Gamma
//! augmentation; the clustering is summarised by minimising the expected
//! Binder loss, and covariate effects by posterior marginal effects.

pub mod diagnostics;
pub mod dp;
pub mod effects;
pub mod error;
pub mod gauss;
pub mod io;
pub mod model;
pub mod partition;
pub mod polya_gamma;
pub mod sampler;
pub mod sim;

pub use error::{Error, Result};
pub use model::{ClusterState, Dimensions, GlobalCoefficients, PanelData, PanelLabels};
pub use sampler::{run_mcmc, two_stage_fit, ChainOutput, Draw, SamplerConfig};
