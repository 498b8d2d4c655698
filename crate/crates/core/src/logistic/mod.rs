//! Binary-outcome estimators: GLM with clustered sandwich, random-intercept
//! GLMM, and the Bayesian samplers.

mod bayes;
mod glm;
mod glmm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use bayes::{sample_bayes_logistic, sample_hier_logistic_normal, sample_logistic_mean_dpm, sample_logistic_sigma_dpm};
pub use glm::{clustered_sandwich, fit_glm_irls, glm_score};
pub use glmm::{fit_glmm_quadrature, GlmmFit};

/// Posterior draws from any of the logistic samplers.
pub type LogisticPosterior = crate::mcmc::Posterior;

/// Point estimates with model-based and, where available, clustered
/// sandwich covariances. Coefficient 0 is the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequentistFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub naive_cov: DMatrix<f64>,
    pub robust_cov: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl FrequentistFit {
    pub fn new(names: Vec<String>, coefficients: Vec<f64>, naive_cov: DMatrix<f64>, converged: bool, iterations: usize) -> Self {
        Self {
            names,
            coefficients,
            naive_cov,
            robust_cov: None,
            converged,
            iterations,
        }
    }

    pub fn naive_se(&self, j: usize) -> f64 {
        self.naive_cov[(j, j)].sqrt()
    }

    /// Robust standard error, falling back to the naive one.
    pub fn robust_se(&self, j: usize) -> f64 {
        self.robust_cov.as_ref().map_or_else(|| self.naive_se(j), |c| c[(j, j)].sqrt())
    }
}
