use crate::dpm::DpmConfig;
use crate::error::Result;
use crate::mcmc::{run_sampler, InterceptPrior, McmcSettings, Outcome, Posterior, Priors};
use crate::panel::SurvivalPanel;

/// Marginal Bayesian Weibull PH model with a log-Normal prior on τ.
pub fn sample_bayes_weibull_marginal(panel: &SurvivalPanel, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    run_sampler(Outcome::Survival(panel), priors, &InterceptPrior::None, mcmc)
}

/// Log-frailties `β0i ~ N(0, sd_random²)`.
pub fn sample_hier_weibull_normal(panel: &SurvivalPanel, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    let prior = InterceptPrior::Normal { sd: priors.sd_random };
    run_sampler(Outcome::Survival(panel), priors, &prior, mcmc)
}

pub fn sample_weibull_mean_dpm(panel: &SurvivalPanel, cfg: &DpmConfig, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    let prior = InterceptPrior::MeanDpm {
        dpm: *cfg,
        within_sd: priors.sd_random,
    };
    run_sampler(Outcome::Survival(panel), priors, &prior, mcmc)
}

pub fn sample_weibull_sigma_dpm(panel: &SurvivalPanel, cfg: &DpmConfig, priors: &Priors, mcmc: &McmcSettings) -> Result<Posterior> {
    run_sampler(Outcome::Survival(panel), priors, &InterceptPrior::SigmaDpm { dpm: *cfg }, mcmc)
}
