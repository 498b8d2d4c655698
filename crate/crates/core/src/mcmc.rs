//! Metropolis-within-Gibbs sampler shared by every Bayesian model.
//!
//! The linear predictor of row `r` for subject `i` is
//! `β0i + β0 + βᵀx_r`. Rows keep a cached predictor and log-likelihood so a
//! coefficient proposal costs one pass over the data and an intercept
//! proposal one pass over that subject's rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm::{gibbs_sweep_assignments, resample_atoms, update_alpha, BaseMeasure, ClusterState, DpmConfig, ATOM_TARGET_ACCEPTANCE};
use crate::error::{Error, Result};
use crate::logistic::fit_glm_irls;
use crate::mh::{metropolis_accept, AdaptiveStep};
use crate::panel::{BinaryPanel, Design, SurvivalPanel};
use crate::stats::{bernoulli_logit_logpmf, mean, median, normal_lpdf, quantile, RandomStream};

/// Target acceptance for scalar random-walk updates.
const SCALAR_TARGET: f64 = 0.44;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            seed: 1,
            chains: 4,
        }
    }
}

impl McmcSettings {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64, chains: usize) -> Result<Self> {
        let s = Self {
            iterations,
            burn_in,
            thin,
            seed,
            chains,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("thin and chains must be at least 1".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Fixed prior hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// SD of the Normal prior on the shared intercept β0.
    pub sd_intercept: f64,
    /// SD of the Normal prior on each slope.
    pub sd_slopes: f64,
    /// σ_{β0i}: SD of the hierarchical-Normal intercepts, and the
    /// within-cluster SD of the Mean-DPM.
    pub sd_random: f64,
    /// log-Normal prior on the Weibull shape τ.
    pub shape_loc: f64,
    pub shape_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            sd_intercept: 10.0,
            sd_slopes: 10.0,
            sd_random: 0.5,
            shape_loc: 0.0,
            shape_scale: 1.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sd_intercept", self.sd_intercept),
            ("sd_slopes", self.sd_slopes),
            ("sd_random", self.sd_random),
            ("shape_scale", self.shape_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        if !self.shape_loc.is_finite() {
            return Err(Error::Config("prior shape_loc must be finite".into()));
        }
        Ok(())
    }
}

/// Prior on the subject intercepts β0i.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InterceptPrior {
    /// Marginal model: no β0i.
    None,
    Normal { sd: f64 },
    /// `β0i ~ N(μ_i, within_sd²)`, `μ_i ~ G`, `G ~ DP(α, N(0, σ0²))`.
    MeanDpm { dpm: DpmConfig, within_sd: f64 },
    /// `β0i ~ N(0, σ²_i)`, `σ²_i ~ G`, `G ~ DP(α, logN)`.
    SigmaDpm { dpm: DpmConfig },
}

impl InterceptPrior {
    pub fn kind(&self) -> &'static str {
        match self {
            InterceptPrior::None => "marginal",
            InterceptPrior::Normal { .. } => "normal",
            InterceptPrior::MeanDpm { .. } => "mean-dpm",
            InterceptPrior::SigmaDpm { .. } => "sigma-dpm",
        }
    }

    fn dpm(&self) -> Option<&DpmConfig> {
        match self {
            InterceptPrior::MeanDpm { dpm, .. } | InterceptPrior::SigmaDpm { dpm } => Some(dpm),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InterceptPrior::None => Ok(()),
            InterceptPrior::Normal { sd } if !(sd > 0.0) => Err(Error::Config(format!("intercept sd must be positive, got {sd}"))),
            InterceptPrior::Normal { .. } => Ok(()),
            InterceptPrior::MeanDpm { dpm, within_sd } => {
                if !(within_sd > 0.0) {
                    return Err(Error::Config(format!("within-cluster sd must be positive, got {within_sd}")));
                }
                if !matches!(dpm.base, BaseMeasure::NormalMean { .. }) {
                    return Err(Error::Config("Mean-DPM needs a Normal base measure over means".into()));
                }
                dpm.validate()
            }
            InterceptPrior::SigmaDpm { dpm } => {
                if !matches!(dpm.base, BaseMeasure::LogNormalSigma { .. }) {
                    return Err(Error::Config("Sigma-DPM needs a log-Normal base measure over variances".into()));
                }
                dpm.validate()
            }
        }
    }

    /// `ln p(b | atom)`; `atom` is ignored for the non-DPM priors.
    #[inline]
    fn log_density(&self, b: f64, atom: f64) -> f64 {
        match *self {
            InterceptPrior::None => 0.0,
            InterceptPrior::Normal { sd } => normal_lpdf(b, 0.0, sd),
            InterceptPrior::MeanDpm { within_sd, .. } => normal_lpdf(b, atom, within_sd),
            InterceptPrior::SigmaDpm { .. } => normal_lpdf(b, 0.0, atom.sqrt()),
        }
    }
}

/// Draws kept from one chain. Per-parameter vectors are indexed by draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// `[parameter][draw]`, parameter 0 being the shared intercept β0.
    pub coefficients: Vec<Vec<f64>>,
    /// Weibull shape τ; empty for binary outcomes.
    pub shape: Vec<f64>,
    /// `[subject][draw]` of `β0 + β0i`; empty for the marginal model.
    pub intercepts: Vec<Vec<f64>>,
    /// `[subject][draw]` of the subject's cluster atom (μ_i or σ²_i); empty
    /// without a DPM prior.
    pub atoms: Vec<Vec<f64>>,
    pub cluster_counts: Vec<usize>,
    pub alpha: Vec<f64>,
    /// Atom acceptance rate over the burn-in (adaptation) phase.
    pub atom_acceptance_burn_in: f64,
    /// Atom acceptance rate after the steps were frozen.
    pub atom_acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub names: Vec<String>,
    pub intercept_prior: InterceptPrior,
    pub settings: McmcSettings,
    pub chains: Vec<ChainDraws>,
}

impl Posterior {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_parameters(&self) -> usize {
        self.names.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.chains[0].coefficients[0].len()
    }

    /// Per-chain draws of coefficient `j`.
    pub fn coefficient_chains(&self, j: usize) -> Vec<&[f64]> {
        self.chains.iter().map(|c| c.coefficients[j].as_slice()).collect()
    }

    /// Draws of coefficient `j` pooled over chains.
    pub fn coefficient_draws(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.coefficients[j].iter().copied()).collect()
    }

    pub fn posterior_mean(&self, j: usize) -> f64 {
        mean(&self.coefficient_draws(j))
    }

    pub fn posterior_median(&self, j: usize) -> f64 {
        median(&self.coefficient_draws(j))
    }

    /// Equal-tailed credible interval for coefficient `j`.
    pub fn credible_interval(&self, j: usize, level: f64) -> (f64, f64) {
        let d = self.coefficient_draws(j);
        let a = (1.0 - level) / 2.0;
        (quantile(&d, a), quantile(&d, 1.0 - a))
    }

    pub fn shape_draws(&self) -> Option<Vec<f64>> {
        if self.chains[0].shape.is_empty() {
            None
        } else {
            Some(self.chains.iter().flat_map(|c| c.shape.iter().copied()).collect())
        }
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        self.chains.iter().flat_map(|c| c.cluster_counts.iter().copied()).collect()
    }

    pub fn has_subject_intercepts(&self) -> bool {
        !self.chains[0].intercepts.is_empty()
    }

    /// Pooled draws of `β0 + β0i` for one subject.
    pub fn subject_intercept_draws(&self, subject: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.intercepts[subject].iter().copied()).collect()
    }

    /// Pooled draws of a subject's cluster atom.
    pub fn subject_atom_draws(&self, subject: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.atoms[subject].iter().copied()).collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.chains[0].intercepts.len()
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Outcome<'a> {
    Binary(&'a BinaryPanel),
    Survival(&'a SurvivalPanel),
}

impl<'a> Outcome<'a> {
    fn design(&self) -> &'a Design {
        match self {
            Outcome::Binary(p) => p.design(),
            Outcome::Survival(p) => p.design(),
        }
    }

    fn names(&self) -> Vec<String> {
        std::iter::once("(intercept)".to_string())
            .chain(self.design().covariate_names().iter().cloned())
            .collect()
    }
}

/// Weibull-specific cached quantities.
struct ShapeState {
    log_tau: f64,
    log_t: Vec<f64>,
    /// `t^τ` per row.
    t_pow: Vec<f64>,
    events: Vec<bool>,
}

impl ShapeState {
    fn new(panel: &SurvivalPanel, log_tau: f64) -> Self {
        let log_t: Vec<f64> = panel.times().iter().map(|t| t.ln()).collect();
        let tau = log_tau.exp();
        let t_pow = log_t.iter().map(|lt| (tau * lt).exp()).collect();
        Self {
            log_tau,
            log_t,
            t_pow,
            events: panel.events().to_vec(),
        }
    }

    /// `δ(ln τ + η + (τ−1) ln t) − e^η t^τ`.
    #[inline]
    fn row_loglik(&self, r: usize, eta: f64, log_tau: f64, t_pow: f64) -> f64 {
        let hazard = if self.events[r] {
            log_tau + eta + (log_tau.exp() - 1.0) * self.log_t[r]
        } else {
            0.0
        };
        hazard - eta.exp() * t_pow
    }
}

struct Chain<'a> {
    outcome: Outcome<'a>,
    design: &'a Design,
    priors: Priors,
    prior: InterceptPrior,
    coef: Vec<f64>,
    b: Vec<f64>,
    eta: Vec<f64>,
    ll: Vec<f64>,
    shape: Option<ShapeState>,
    clusters: Option<ClusterState>,
    alpha: f64,
    coef_steps: Vec<AdaptiveStep>,
    b_steps: Vec<AdaptiveStep>,
    shift_step: AdaptiveStep,
    shape_step: AdaptiveStep,
    atom_step: AdaptiveStep,
    scratch_eta: Vec<f64>,
    scratch_ll: Vec<f64>,
    stream: RandomStream,
}

impl<'a> Chain<'a> {
    fn new(outcome: Outcome<'a>, priors: Priors, prior: InterceptPrior, init: &[f64], mut stream: RandomStream) -> Self {
        let design = outcome.design();
        let n = design.n_subjects();
        let rows = design.n_rows();
        let coef: Vec<f64> = init.iter().map(|c| c + 0.1 * stream.std_normal()).collect();
        let shape = match outcome {
            Outcome::Survival(p) => Some(ShapeState::new(p, 0.0)),
            Outcome::Binary(_) => None,
        };
        let clusters = match prior {
            InterceptPrior::MeanDpm { .. } => Some(ClusterState::single_cluster(n, 0.0)),
            InterceptPrior::SigmaDpm { .. } => Some(ClusterState::single_cluster(n, 1.0)),
            _ => None,
        };
        let alpha = prior.dpm().map_or(1.0, |d| d.alpha);
        let mut chain = Self {
            outcome,
            design,
            priors,
            prior,
            coef,
            b: vec![0.0; n],
            eta: vec![0.0; rows],
            ll: vec![0.0; rows],
            shape,
            clusters,
            alpha,
            coef_steps: (0..init.len()).map(|_| AdaptiveStep::new(0.05, SCALAR_TARGET)).collect(),
            b_steps: (0..n).map(|_| AdaptiveStep::new(0.5, SCALAR_TARGET)).collect(),
            shift_step: AdaptiveStep::new(0.1, SCALAR_TARGET),
            shape_step: AdaptiveStep::new(0.05, SCALAR_TARGET),
            atom_step: AdaptiveStep::new(0.3, ATOM_TARGET_ACCEPTANCE),
            scratch_eta: vec![0.0; rows],
            scratch_ll: vec![0.0; rows],
            stream,
        };
        chain.refresh();
        chain
    }

    fn has_intercepts(&self) -> bool {
        !matches!(self.prior, InterceptPrior::None)
    }

    fn refresh(&mut self) {
        for r in 0..self.design.n_rows() {
            let x = self.design.row(r);
            let e = self.b[self.design.subject(r)]
                + self.coef[0]
                + x.iter().zip(&self.coef[1..]).map(|(a, c)| a * c).sum::<f64>();
            self.eta[r] = e;
            self.ll[r] = self.row_loglik(r, e);
        }
    }

    #[inline]
    fn row_loglik(&self, r: usize, eta: f64) -> f64 {
        match (&self.outcome, &self.shape) {
            (Outcome::Binary(p), _) => bernoulli_logit_logpmf(p.y(r), eta),
            (Outcome::Survival(_), Some(s)) => s.row_loglik(r, eta, s.log_tau, s.t_pow[r]),
            (Outcome::Survival(_), None) => unreachable!("survival chain without shape state"),
        }
    }

    #[inline]
    fn covariate(&self, r: usize, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            self.design.row(r)[j - 1]
        }
    }

    fn atom_of(&self, i: usize) -> f64 {
        self.clusters.as_ref().map_or(0.0, |c| c.atom_of(i))
    }

    fn update_coefficients(&mut self) {
        let rows = self.design.n_rows();
        for j in 0..self.coef.len() {
            let current = self.coef[j];
            let proposal = self.coef_steps[j].propose(current, &mut self.stream);
            let delta = proposal - current;
            let mut new_sum = 0.0;
            let mut old_sum = 0.0;
            for r in 0..rows {
                let e = self.eta[r] + delta * self.covariate(r, j);
                let l = self.row_loglik(r, e);
                self.scratch_eta[r] = e;
                self.scratch_ll[r] = l;
                new_sum += l;
                old_sum += self.ll[r];
            }
            let sd = if j == 0 { self.priors.sd_intercept } else { self.priors.sd_slopes };
            let log_ratio = new_sum - old_sum + normal_lpdf(proposal, 0.0, sd) - normal_lpdf(current, 0.0, sd);
            let ok = metropolis_accept(log_ratio, &mut self.stream);
            if ok {
                self.coef[j] = proposal;
                std::mem::swap(&mut self.eta, &mut self.scratch_eta);
                std::mem::swap(&mut self.ll, &mut self.scratch_ll);
            }
            self.coef_steps[j].record(ok);
        }
    }

    fn update_shape(&mut self) {
        let Some(shape) = self.shape.as_ref() else { return };
        let current = shape.log_tau;
        let proposal = self.shape_step.propose(current, &mut self.stream);
        let tau = proposal.exp();
        let mut new_sum = 0.0;
        let mut old_sum = 0.0;
        for r in 0..self.design.n_rows() {
            let tp = (tau * shape.log_t[r]).exp();
            let l = shape.row_loglik(r, self.eta[r], proposal, tp);
            self.scratch_eta[r] = tp;
            self.scratch_ll[r] = l;
            new_sum += l;
            old_sum += self.ll[r];
        }
        // RW on ln τ: the log-Normal prior becomes a Normal on ln τ.
        let (loc, scale) = (self.priors.shape_loc, self.priors.shape_scale);
        let log_ratio = new_sum - old_sum + normal_lpdf(proposal, loc, scale) - normal_lpdf(current, loc, scale);
        let ok = metropolis_accept(log_ratio, &mut self.stream);
        if ok {
            let shape = self.shape.as_mut().expect("checked above");
            shape.log_tau = proposal;
            shape.t_pow.copy_from_slice(&self.scratch_eta);
            std::mem::swap(&mut self.ll, &mut self.scratch_ll);
        }
        self.shape_step.record(ok);
    }

    fn update_intercepts(&mut self) {
        let design = self.design;
        for i in 0..design.n_subjects() {
            let current = self.b[i];
            let proposal = self.b_steps[i].propose(current, &mut self.stream);
            let delta = proposal - current;
            let atom = self.atom_of(i);
            let mut log_ratio = self.prior.log_density(proposal, atom) - self.prior.log_density(current, atom);
            for &r in design.rows_of(i) {
                let l = self.row_loglik(r, self.eta[r] + delta);
                self.scratch_ll[r] = l;
                log_ratio += l - self.ll[r];
            }
            let ok = metropolis_accept(log_ratio, &mut self.stream);
            if ok {
                self.b[i] = proposal;
                for &r in design.rows_of(i) {
                    self.eta[r] += delta;
                    self.ll[r] = self.scratch_ll[r];
                }
            }
            self.b_steps[i].record(ok);
        }
    }

    /// Move β0 up and every β0i (and Mean-DPM atom) down by the same amount.
    /// The linear predictor is unchanged, so only prior terms enter.
    fn update_shift(&mut self) {
        let delta = self.shift_step.propose(0.0, &mut self.stream);
        let sd0 = self.priors.sd_intercept;
        let mut log_ratio = normal_lpdf(self.coef[0] + delta, 0.0, sd0) - normal_lpdf(self.coef[0], 0.0, sd0);
        match (&self.prior, &self.clusters) {
            (InterceptPrior::MeanDpm { dpm, .. }, Some(state)) => {
                for (&a, &n) in state.atoms().iter().zip(state.counts()) {
                    if n > 0 {
                        log_ratio += dpm.base.log_density_unconstrained(a - delta) - dpm.base.log_density_unconstrained(a);
                    }
                }
            }
            _ => {
                for i in 0..self.b.len() {
                    let atom = self.atom_of(i);
                    log_ratio += self.prior.log_density(self.b[i] - delta, atom) - self.prior.log_density(self.b[i], atom);
                }
            }
        }
        let ok = metropolis_accept(log_ratio, &mut self.stream);
        if ok {
            self.coef[0] += delta;
            self.b.iter_mut().for_each(|b| *b -= delta);
            if let (InterceptPrior::MeanDpm { .. }, Some(state)) = (&self.prior, self.clusters.as_mut()) {
                state.shift_atoms(-delta);
            }
        }
        self.shift_step.record(ok);
    }

    fn update_clusters(&mut self) -> Result<()> {
        let Some(mut state) = self.clusters.take() else { return Ok(()) };
        let dpm = *self.prior.dpm().expect("clusters imply a DPM prior");
        let cfg = DpmConfig { alpha: self.alpha, ..dpm };
        let prior = self.prior;
        let b = &self.b;
        let result = gibbs_sweep_assignments(&mut state, &cfg, |i, atom| prior.log_density(b[i], atom), &mut self.stream);
        if result.is_ok() {
            resample_atoms(
                &mut state,
                &cfg,
                |who, atom| who.iter().map(|&i| prior.log_density(b[i], atom)).sum(),
                &mut self.atom_step,
                &mut self.stream,
            );
            if let Some(ap) = dpm.alpha_prior {
                self.alpha = update_alpha(self.alpha, ap, state.n_clusters(), state.n_subjects(), &mut self.stream)?;
            }
        }
        self.clusters = Some(state);
        result
    }

    fn iterate(&mut self) -> Result<()> {
        self.update_coefficients();
        self.update_shape();
        if self.has_intercepts() {
            self.update_intercepts();
            self.update_shift();
            self.update_clusters()?;
        }
        Ok(())
    }

    fn freeze(&mut self) {
        self.coef_steps.iter_mut().for_each(AdaptiveStep::freeze);
        self.b_steps.iter_mut().for_each(AdaptiveStep::freeze);
        self.shift_step.freeze();
        self.shape_step.freeze();
        self.atom_step.freeze();
    }

    fn run(mut self, settings: &McmcSettings) -> Result<ChainDraws> {
        let keep = settings.retained();
        let n = self.design.n_subjects();
        let dpm = self.clusters.is_some();
        let with_b = self.has_intercepts();
        let mut out = ChainDraws {
            coefficients: vec![Vec::with_capacity(keep); self.coef.len()],
            shape: Vec::new(),
            intercepts: if with_b { vec![Vec::with_capacity(keep); n] } else { Vec::new() },
            atoms: if dpm { vec![Vec::with_capacity(keep); n] } else { Vec::new() },
            cluster_counts: Vec::new(),
            alpha: Vec::new(),
            atom_acceptance_burn_in: f64::NAN,
            atom_acceptance: f64::NAN,
        };
        for it in 0..settings.iterations {
            if it == settings.burn_in {
                out.atom_acceptance_burn_in = self.atom_step.acceptance_rate();
                self.freeze();
            }
            self.iterate()?;
            if it >= settings.burn_in && (it - settings.burn_in).is_multiple_of(settings.thin) {
                for (d, c) in out.coefficients.iter_mut().zip(&self.coef) {
                    d.push(*c);
                }
                if let Some(s) = &self.shape {
                    out.shape.push(s.log_tau.exp());
                }
                if with_b {
                    for (d, b) in out.intercepts.iter_mut().zip(&self.b) {
                        d.push(self.coef[0] + b);
                    }
                }
                if let Some(state) = &self.clusters {
                    for (i, d) in out.atoms.iter_mut().enumerate() {
                        d.push(state.atom_of(i));
                    }
                    out.cluster_counts.push(state.n_clusters());
                    out.alpha.push(self.alpha);
                }
            }
        }
        out.atom_acceptance = self.atom_step.acceptance_rate();
        Ok(out)
    }
}

fn initial_coefficients(outcome: Outcome) -> Vec<f64> {
    let k = outcome.design().n_covariates() + 1;
    match outcome {
        Outcome::Binary(p) => fit_glm_irls(p).map(|f| f.coefficients).unwrap_or_else(|_| vec![0.0; k]),
        Outcome::Survival(p) => {
            // exponential rate MLE for the intercept, slopes at zero
            let total: f64 = p.times().iter().sum();
            let events = p.n_events().max(1) as f64;
            let mut c = vec![0.0; k];
            c[0] = (events / total).ln();
            c
        }
    }
}

pub(crate) fn run_sampler(outcome: Outcome, priors: &Priors, prior: &InterceptPrior, settings: &McmcSettings) -> Result<Posterior> {
    settings.validate()?;
    priors.validate()?;
    prior.validate()?;
    let init = initial_coefficients(outcome);
    let master = RandomStream::new(settings.seed);
    let chains = (0..settings.chains)
        .into_par_iter()
        .map(|c| Chain::new(outcome, *priors, *prior, &init, master.substream(0, c as u64)).run(settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(Posterior {
        names: outcome.names(),
        intercept_prior: *prior,
        settings: *settings,
        chains,
    })
}
