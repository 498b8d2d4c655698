use crate::dpm::DpmConfig;
use crate::error::Result;
use crate::mcmc::{run_sampler, InterceptPrior, McmcSettings, Outcome, Posterior, Priors};
use crate::panel::BinaryPanel;

/// Marginal Bayesian logistic regression (no subject intercepts).
pub fn sample_bayes_logistic(panel: &BinaryPanel, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    run_sampler(Outcome::Binary(panel), priors, &InterceptPrior::None, mcmc)
}

/// Random intercepts `β0i ~ N(0, sd_random²)`.
pub fn sample_hier_logistic_normal(panel: &BinaryPanel, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    let prior = InterceptPrior::Normal { sd: priors.sd_random };
    run_sampler(Outcome::Binary(panel), priors, &prior, mcmc)
}

/// Mean-DPM: `β0i ~ N(μ_i, sd_random²)` with DP-distributed means.
pub fn sample_logistic_mean_dpm(panel: &BinaryPanel, cfg: &DpmConfig, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    let prior = InterceptPrior::MeanDpm {
        dpm: *cfg,
        within_sd: priors.sd_random,
    };
    run_sampler(Outcome::Binary(panel), priors, &prior, mcmc)
}

/// Sigma-DPM: `β0i ~ N(0, σ²_i)` with DP-distributed variances.
pub fn sample_logistic_sigma_dpm(panel: &BinaryPanel, cfg: &DpmConfig, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    run_sampler(Outcome::Binary(panel), priors, &InterceptPrior::SigmaDpm { dpm: *cfg }, mcmc)
}
