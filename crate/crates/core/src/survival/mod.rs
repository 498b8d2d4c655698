//! Time-to-event estimators under the Weibull proportional-hazards form
//! `h(t) = τ θ t^(τ−1)`, `ln θ = β0i + β0 + βᵀx`.

mod aft;
mod bayes;
mod cox;

pub use aft::{fit_weibull_aft, WeibullAftFit};
pub use bayes::{sample_bayes_weibull_marginal, sample_hier_weibull_normal, sample_weibull_mean_dpm, sample_weibull_sigma_dpm};
pub use cox::{cox_score, fit_cox, CoxFit};

/// Posterior draws from any of the Weibull samplers.
pub type SurvivalPosterior = crate::mcmc::Posterior;
