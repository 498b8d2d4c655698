//! Scenario generators, the replication driver and the sensitivity sweeps.

use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpm::DpmConfig;
use crate::error::{Error, Result};
use crate::logistic::{fit_glm_irls, fit_glmm_quadrature, sample_bayes_logistic, sample_hier_logistic_normal, sample_logistic_mean_dpm, sample_logistic_sigma_dpm};
use crate::mcmc::{McmcSettings, Posterior, Priors};
use crate::panel::{BinaryPanel, SurvivalPanel};
use crate::quadrature::gauss_hermite;
use crate::stats::{mean, median, normal_quantile, quantile, sigmoid, variance, RandomStream};
use crate::survival::{
    fit_cox, fit_weibull_aft, sample_bayes_weibull_marginal, sample_hier_weibull_normal, sample_weibull_mean_dpm, sample_weibull_sigma_dpm,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InterceptLaw {
    StdNormal,
    /// `θ N(mu1, sd²) + (1−θ) N(mu2, sd²)`.
    MixMeans { mu1: f64, mu2: f64, sd: f64 },
    /// `θ N(0, sd1²) + (1−θ) N(0, sd2²)`.
    MixSigmas { sd1: f64, sd2: f64 },
}

impl InterceptLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InterceptLaw::StdNormal => true,
            InterceptLaw::MixMeans { mu1, mu2, sd } => sd > 0.0 && mu1.is_finite() && mu2.is_finite(),
            InterceptLaw::MixSigmas { sd1, sd2 } => sd1 > 0.0 && sd2 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intercept law {self:?}")))
        }
    }

    /// Components as `(weight, mean, sd)` given mixing probability `p`.
    pub fn components(&self, p: f64) -> Vec<(f64, f64, f64)> {
        match *self {
            InterceptLaw::StdNormal => vec![(1.0, 0.0, 1.0)],
            InterceptLaw::MixMeans { mu1, mu2, sd } => vec![(p, mu1, sd), (1.0 - p, mu2, sd)],
            InterceptLaw::MixSigmas { sd1, sd2 } => vec![(p, 0.0, sd1), (1.0 - p, 0.0, sd2)],
        }
    }

    /// Population variance of the intercepts.
    pub fn variance(&self, p: f64) -> f64 {
        let comps = self.components(p);
        let m: f64 = comps.iter().map(|(w, mu, _)| w * mu).sum();
        comps.iter().map(|(w, mu, sd)| w * (sd * sd + mu * mu)).sum::<f64>() - m * m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeFamily {
    Binary,
    /// Weibull PH times with shape τ; optional administrative censoring at
    /// the given empirical quantile of the generated times.
    Survival { shape: f64, censor_quantile: Option<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub law: InterceptLaw,
    /// Probability θ_i = 1 of the first mixture component.
    pub mix_prob: f64,
    pub n_subjects: usize,
    pub li: usize,
    pub beta1: f64,
    pub family: OutcomeFamily,
}

impl ScenarioSpec {
    /// Desk-scale preset: 150 subjects with 12 rows each, β1 = 1.
    pub fn new(law: InterceptLaw, family: OutcomeFamily) -> Self {
        Self {
            law,
            mix_prob: 0.5,
            n_subjects: 150,
            li: 12,
            beta1: 1.0,
            family,
        }
    }

    pub fn normal(family: OutcomeFamily) -> Self {
        Self::new(InterceptLaw::StdNormal, family)
    }

    pub fn mix_means(family: OutcomeFamily) -> Self {
        Self::new(
            InterceptLaw::MixMeans {
                mu1: -1.5,
                mu2: 1.5,
                sd: 1.0,
            },
            family,
        )
    }

    pub fn mix_sigmas(family: OutcomeFamily) -> Self {
        Self::new(InterceptLaw::MixSigmas { sd1: 1.0, sd2: 5f64.sqrt() }, family)
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if !(self.mix_prob > 0.0 && self.mix_prob < 1.0) {
            return Err(Error::Config(format!("mixing probability must be in (0,1), got {}", self.mix_prob)));
        }
        if self.n_subjects == 0 || self.li == 0 {
            return Err(Error::Config("need at least one subject and one row per subject".into()));
        }
        if !self.beta1.is_finite() {
            return Err(Error::Config("beta1 must be finite".into()));
        }
        if let OutcomeFamily::Survival { shape, censor_quantile } = self.family {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::Config(format!("Weibull shape must be positive, got {shape}")));
            }
            if let Some(q) = censor_quantile {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(Error::Config(format!("censoring quantile must be in (0,1], got {q}")));
                }
            }
        }
        Ok(())
    }
}

/// Draw `n_subjects` intercepts from the scenario's law.
pub fn gen_intercepts(spec: &ScenarioSpec, stream: &mut RandomStream) -> Vec<f64> {
    (0..spec.n_subjects)
        .map(|_| {
            let first = stream.uniform() < spec.mix_prob;
            match spec.law {
                InterceptLaw::StdNormal => stream.std_normal(),
                InterceptLaw::MixMeans { mu1, mu2, sd } => (if first { mu1 } else { mu2 }) + sd * stream.std_normal(),
                InterceptLaw::MixSigmas { sd1, sd2 } => (if first { sd1 } else { sd2 }) * stream.std_normal(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub intercepts: Vec<f64>,
    pub beta1: f64,
}

fn covariates(spec: &ScenarioSpec, stream: &mut RandomStream) -> (Vec<usize>, Vec<Vec<f64>>) {
    let rows = spec.n_subjects * spec.li;
    let subjects = (0..rows).map(|r| r / spec.li).collect();
    let x = (0..rows).map(|_| vec![stream.std_normal()]).collect();
    (subjects, x)
}

/// Binary panel with `y ~ Bernoulli(sigmoid(β0i + β1 x))`.
pub fn gen_binary_panel(spec: &ScenarioSpec, stream: &mut RandomStream) -> Result<(BinaryPanel, Truth)> {
    spec.validate()?;
    let b = gen_intercepts(spec, stream);
    let (subjects, x) = covariates(spec, stream);
    let y = subjects
        .iter()
        .zip(&x)
        .map(|(&s, xr)| stream.bernoulli(sigmoid(b[s] + spec.beta1 * xr[0])))
        .collect();
    let panel = BinaryPanel::new(subjects, x, y)?;
    Ok((
        panel,
        Truth {
            intercepts: b,
            beta1: spec.beta1,
        },
    ))
}

/// Weibull PH panel by inversion: `t = (−ln U / e^{β0i + β1 x})^{1/τ}`.
pub fn gen_survival_panel(spec: &ScenarioSpec, stream: &mut RandomStream) -> Result<(SurvivalPanel, Truth)> {
    spec.validate()?;
    let OutcomeFamily::Survival { shape, censor_quantile } = spec.family else {
        return Err(Error::Config("scenario does not describe survival outcomes".into()));
    };
    let b = gen_intercepts(spec, stream);
    let (subjects, x) = covariates(spec, stream);
    let mut times: Vec<f64> = subjects
        .iter()
        .zip(&x)
        .map(|(&s, xr)| {
            let log_rate = b[s] + spec.beta1 * xr[0];
            (((-stream.uniform().ln()).ln() - log_rate) / shape).exp()
        })
        .collect();
    let mut events = vec![true; times.len()];
    if let Some(q) = censor_quantile {
        let c = quantile(&times, q);
        for (t, e) in times.iter_mut().zip(events.iter_mut()) {
            if *t > c {
                *t = c;
                *e = false;
            }
        }
    }
    let panel = SurvivalPanel::new(subjects, x, times, events)?;
    Ok((
        panel,
        Truth {
            intercepts: b,
            beta1: spec.beta1,
        },
    ))
}

/// A generated data set with its generating truth.
#[derive(Clone, Debug, PartialEq)]
pub enum SimData {
    Binary(BinaryPanel, Truth),
    Survival(SurvivalPanel, Truth),
}

impl SimData {
    pub fn generate(spec: &ScenarioSpec, stream: &mut RandomStream) -> Result<Self> {
        Ok(match spec.family {
            OutcomeFamily::Binary => {
                let (p, t) = gen_binary_panel(spec, stream)?;
                SimData::Binary(p, t)
            }
            OutcomeFamily::Survival { .. } => {
                let (p, t) = gen_survival_panel(spec, stream)?;
                SimData::Survival(p, t)
            }
        })
    }

    pub fn truth(&self) -> &Truth {
        match self {
            SimData::Binary(_, t) | SimData::Survival(_, t) => t,
        }
    }
}

/// The estimators compared in the simulation study. The Bayesian variants
/// apply to either outcome family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    Glm,
    Gee,
    Glmm,
    Cox,
    WeibullAft,
    Marginal,
    HierNormal,
    MeanDpm,
    SigmaDpm,
}

impl Model {
    pub const ALL: [Model; 9] = [
        Model::Glm,
        Model::Gee,
        Model::Glmm,
        Model::Cox,
        Model::WeibullAft,
        Model::Marginal,
        Model::HierNormal,
        Model::MeanDpm,
        Model::SigmaDpm,
    ];

    pub const BINARY: [Model; 7] = [
        Model::Glm,
        Model::Gee,
        Model::Glmm,
        Model::Marginal,
        Model::HierNormal,
        Model::MeanDpm,
        Model::SigmaDpm,
    ];

    pub const SURVIVAL: [Model; 6] = [Model::Cox, Model::WeibullAft, Model::Marginal, Model::HierNormal, Model::MeanDpm, Model::SigmaDpm];

    /// Short identifier used on the command line and in CSV output.
    pub fn id(&self) -> &'static str {
        match self {
            Model::Glm => "glm",
            Model::Gee => "gee",
            Model::Glmm => "glmm",
            Model::Cox => "cox",
            Model::WeibullAft => "aft",
            Model::Marginal => "bayes",
            Model::HierNormal => "hier-normal",
            Model::MeanDpm => "mean-dpm",
            Model::SigmaDpm => "sigma-dpm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Model::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }

    /// Stable key for the model's random sub-stream.
    pub fn stream_key(&self) -> u64 {
        Model::ALL.iter().position(|m| m == self).expect("listed") as u64 + 1
    }

    pub fn is_bayesian(&self) -> bool {
        matches!(self, Model::Marginal | Model::HierNormal | Model::MeanDpm | Model::SigmaDpm)
    }

    pub fn supports(&self, family: &OutcomeFamily) -> bool {
        match family {
            OutcomeFamily::Binary => Model::BINARY.contains(self),
            OutcomeFamily::Survival { .. } => Model::SURVIVAL.contains(self),
        }
    }
}

/// Everything a model fit needs besides the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// The seed field is overwritten per fit.
    pub mcmc: McmcSettings,
    pub priors: Priors,
    pub mean_dpm: DpmConfig,
    pub sigma_dpm: DpmConfig,
    pub quad_points: usize,
    /// Credible/confidence level for intervals.
    pub level: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            mcmc: McmcSettings {
                chains: 1,
                ..McmcSettings::default()
            },
            priors: Priors::default(),
            mean_dpm: DpmConfig::mean_default(),
            sigma_dpm: DpmConfig::sigma_default(),
            quad_points: 15,
            level: 0.95,
        }
    }
}

/// Slope estimate from one fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    /// MLE, or posterior mean for Bayesian models.
    pub estimate: f64,
    /// Posterior median; equals `estimate` for frequentist fits.
    pub median: f64,
    /// Standard error or posterior SD.
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FitOutcome {
    fn wald(estimate: f64, se: f64, level: f64) -> Self {
        let z = normal_quantile(0.5 + level / 2.0);
        Self {
            estimate,
            median: estimate,
            se,
            lower: estimate - z * se,
            upper: estimate + z * se,
        }
    }

    fn posterior(post: &Posterior, j: usize, level: f64) -> Self {
        let d = post.coefficient_draws(j);
        let a = (1.0 - level) / 2.0;
        Self {
            estimate: mean(&d),
            median: median(&d),
            se: variance(&d, 1).sqrt(),
            lower: quantile(&d, a),
            upper: quantile(&d, 1.0 - a),
        }
    }
}

/// Run the sampler behind a Bayesian model. Frequentist models are an error.
pub fn sample_posterior(model: Model, data: &SimData, settings: &FitSettings, seed: u64) -> Result<Posterior> {
    let mcmc = McmcSettings { seed, ..settings.mcmc };
    let pr = &settings.priors;
    match (model, data) {
        (Model::Marginal, SimData::Binary(p, _)) => sample_bayes_logistic(p, pr, &mcmc),
        (Model::HierNormal, SimData::Binary(p, _)) => sample_hier_logistic_normal(p, pr, &mcmc),
        (Model::MeanDpm, SimData::Binary(p, _)) => sample_logistic_mean_dpm(p, &settings.mean_dpm, pr, &mcmc),
        (Model::SigmaDpm, SimData::Binary(p, _)) => sample_logistic_sigma_dpm(p, &settings.sigma_dpm, pr, &mcmc),
        (Model::Marginal, SimData::Survival(p, _)) => sample_bayes_weibull_marginal(p, pr, &mcmc),
        (Model::HierNormal, SimData::Survival(p, _)) => sample_hier_weibull_normal(p, pr, &mcmc),
        (Model::MeanDpm, SimData::Survival(p, _)) => sample_weibull_mean_dpm(p, &settings.mean_dpm, pr, &mcmc),
        (Model::SigmaDpm, SimData::Survival(p, _)) => sample_weibull_sigma_dpm(p, &settings.sigma_dpm, pr, &mcmc),
        (m, _) => Err(Error::Config(format!("model '{}' has no posterior for this outcome family", m.id()))),
    }
}

/// Fit one model and report the coefficient of the first covariate.
pub fn fit_model(model: Model, data: &SimData, settings: &FitSettings, seed: u64) -> Result<FitOutcome> {
    let level = settings.level;
    if model.is_bayesian() {
        let post = sample_posterior(model, data, settings, seed)?;
        // column 0 is the intercept
        return Ok(FitOutcome::posterior(&post, 1, level));
    }
    match (model, data) {
        (Model::Glm, SimData::Binary(p, _)) => {
            let f = fit_glm_irls(p)?;
            Ok(FitOutcome::wald(f.coefficients[1], f.naive_se(1), level))
        }
        (Model::Gee, SimData::Binary(p, _)) => {
            let f = fit_glm_irls(p)?;
            Ok(FitOutcome::wald(f.coefficients[1], f.robust_se(1), level))
        }
        (Model::Glmm, SimData::Binary(p, _)) => {
            let f = fit_glmm_quadrature(p, settings.quad_points)?;
            if !f.fit.converged {
                return Err(Error::NonConvergence {
                    model: "GLMM",
                    iterations: f.fit.iterations,
                });
            }
            Ok(FitOutcome::wald(f.fit.coefficients[1], f.fit.naive_se(1), level))
        }
        (Model::Cox, SimData::Survival(p, _)) => {
            let f = fit_cox(p)?;
            Ok(FitOutcome::wald(f.coefficients[0], f.robust_se(0), level))
        }
        (Model::WeibullAft, SimData::Survival(p, _)) => {
            let f = fit_weibull_aft(p)?;
            if !f.fit.converged {
                return Err(Error::NonConvergence {
                    model: "Weibull AFT",
                    iterations: f.fit.iterations,
                });
            }
            Ok(FitOutcome::wald(f.ph_coefficients[1], f.ph_robust_se(1), level))
        }
        (m, _) => Err(Error::Config(format!("model '{}' does not apply to this outcome family", m.id()))),
    }
}

/// Anything the replication driver can fit.
pub trait Estimator: Sync {
    fn id(&self) -> String;
    /// Key of the estimator's random sub-stream within a replication; must
    /// be unique among the estimators of one run and at least 1.
    fn stream_key(&self) -> u64;
    fn fit(&self, data: &SimData, seed: u64) -> Result<FitOutcome>;
}

/// A [`Model`] bound to its fit settings.
#[derive(Clone, Copy, Debug)]
pub struct ModelFit {
    pub model: Model,
    pub settings: FitSettings,
}

impl Estimator for ModelFit {
    fn id(&self) -> String {
        self.model.id().to_string()
    }

    fn stream_key(&self) -> u64 {
        self.model.stream_key()
    }

    fn fit(&self, data: &SimData, seed: u64) -> Result<FitOutcome> {
        fit_model(self.model, data, &self.settings, seed)
    }
}

pub fn model_fits(models: &[Model], settings: &FitSettings) -> Vec<ModelFit> {
    models.iter().map(|&model| ModelFit { model, settings: *settings }).collect()
}

/// One fit within one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub model: String,
    /// `Err` holds the failure message.
    pub outcome: std::result::Result<FitOutcome, String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub truth: f64,
    pub mean: f64,
    /// Replication SD with divisor R (so that `mse = bias² + sd²`).
    pub sd: f64,
    /// Mean squared error against the truth.
    pub mse: f64,
    pub successes: usize,
    pub failures: usize,
}

impl SummaryRow {
    pub fn from_estimates(model: &str, truth: f64, estimates: &[f64], failures: usize) -> Self {
        let (m, sd, mse) = if estimates.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let m = mean(estimates);
            let mse = estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / estimates.len() as f64;
            (m, variance(estimates, 0).sqrt(), mse)
        };
        Self {
            model: model.to_string(),
            truth,
            mean: m,
            sd,
            mse,
            successes: estimates.len(),
            failures,
        }
    }

    pub fn bias(&self) -> f64 {
        self.mean - self.truth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, model: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Rebuild the summary from raw per-replication records, keeping the
    /// order in which models first appear.
    pub fn from_records(records: &[ReplicationRecord], truth: f64) -> Self {
        let mut order: Vec<&str> = Vec::new();
        for r in records {
            if !order.contains(&r.model.as_str()) {
                order.push(&r.model);
            }
        }
        let rows = order
            .into_iter()
            .map(|m| {
                let mine: Vec<&ReplicationRecord> = records.iter().filter(|r| r.model == m).collect();
                let est: Vec<f64> = mine.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| o.estimate)).collect();
                SummaryRow::from_estimates(m, truth, &est, mine.len() - est.len())
            })
            .collect();
        Self { rows }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRun {
    pub spec: ScenarioSpec,
    pub replications: usize,
    pub master_seed: u64,
    pub summary: SummaryTable,
    /// Sorted by replication, then by the requested model order.
    pub records: Vec<ReplicationRecord>,
}

/// Seed handed to the estimator with stream key `key` in replication `rep`.
pub fn fit_seed(master_seed: u64, rep: usize, key: u64) -> u64 {
    RandomStream::new(master_seed).substream(rep as u64, key).next_u64()
}

/// The panel of replication `rep`, exactly as [`run_replications`] sees it.
pub fn replication_data(spec: &ScenarioSpec, master_seed: u64, rep: usize) -> Result<SimData> {
    SimData::generate(spec, &mut RandomStream::new(master_seed).substream(rep as u64, 0))
}

/// Generate `replications` panels and fit every estimator to each.
///
/// Replication `r` draws its panel from sub-stream `(r, 0)` of the master
/// seed and estimator `e` seeds its fit from sub-stream `(r, e.stream_key())`,
/// so results do not depend on estimator order or thread scheduling. With
/// `threads = None` the global rayon pool is used.
pub fn run_replications(
    spec: &ScenarioSpec,
    estimators: &[&dyn Estimator],
    replications: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<ReplicationRun> {
    spec.validate()?;
    if replications == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let mut keys: Vec<u64> = estimators.iter().map(|e| e.stream_key()).collect();
    keys.sort_unstable();
    if keys.windows(2).any(|w| w[0] == w[1]) || keys.first() == Some(&0) {
        return Err(Error::Config("estimator stream keys must be distinct and non-zero".into()));
    }
    let work = || -> Result<Vec<Vec<ReplicationRecord>>> {
        (0..replications)
            .into_par_iter()
            .map(|rep| {
                let data = replication_data(spec, master_seed, rep)?;
                Ok(estimators
                    .iter()
                    .map(|e| {
                        let seed = fit_seed(master_seed, rep, e.stream_key());
                        let start = Instant::now();
                        let outcome = e.fit(&data, seed).map_err(|err| err.to_string());
                        ReplicationRecord {
                            replication: rep,
                            model: e.id(),
                            outcome,
                            seconds: start.elapsed().as_secs_f64(),
                        }
                    })
                    .collect())
            })
            .collect()
    };
    let nested = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let records: Vec<ReplicationRecord> = nested.into_iter().flatten().collect();
    Ok(ReplicationRun {
        spec: *spec,
        replications,
        master_seed,
        summary: SummaryTable::from_records(&records, spec.beta1),
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub grid: String,
    pub value: f64,
    pub run: ReplicationRun,
}

fn sweep(
    grid: &str,
    specs: Vec<(f64, ScenarioSpec)>,
    estimators: &[&dyn Estimator],
    replications: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    // Every grid point shares the master seed (common random numbers), which
    // sharpens comparisons across the grid.
    specs
        .into_iter()
        .map(|(value, spec)| {
            Ok(SweepPoint {
                grid: grid.to_string(),
                value,
                run: run_replications(&spec, estimators, replications, master_seed, threads)?,
            })
        })
        .collect()
}

/// Vary the number of rows per subject.
pub fn sweep_li(
    base: &ScenarioSpec,
    values: &[usize],
    estimators: &[&dyn Estimator],
    replications: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let specs = values.iter().map(|&li| (li as f64, ScenarioSpec { li, ..*base })).collect();
    sweep("li", specs, estimators, replications, master_seed, threads)
}

/// Vary `|μ2 − μ1|` in units of the shared component SD, keeping the two
/// means symmetric about zero.
pub fn sweep_mu_gap(
    base: &ScenarioSpec,
    gaps: &[f64],
    estimators: &[&dyn Estimator],
    replications: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let sd = match base.law {
        InterceptLaw::MixMeans { sd, .. } => sd,
        _ => 1.0,
    };
    let specs = gaps
        .iter()
        .map(|&g| {
            let law = InterceptLaw::MixMeans {
                mu1: -0.5 * g * sd,
                mu2: 0.5 * g * sd,
                sd,
            };
            (g, ScenarioSpec { law, ..*base })
        })
        .collect();
    sweep("mu-gap", specs, estimators, replications, master_seed, threads)
}

/// Vary `σ2/σ1` with `σ1` held fixed.
pub fn sweep_sigma_ratio(
    base: &ScenarioSpec,
    ratios: &[f64],
    estimators: &[&dyn Estimator],
    replications: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let sd1 = match base.law {
        InterceptLaw::MixSigmas { sd1, .. } => sd1,
        _ => 1.0,
    };
    let specs = ratios
        .iter()
        .map(|&r| (r, ScenarioSpec { law: InterceptLaw::MixSigmas { sd1, sd2: r * sd1 }, ..*base }))
        .collect();
    sweep("sigma-ratio", specs, estimators, replications, master_seed, threads)
}

pub const LI_GRID: [usize; 4] = [1, 3, 6, 12];
pub const MU_GAP_GRID: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 4.0];
pub const SIGMA_RATIO_GRID: [f64; 4] = [1.5, 2.0, 3.0, 5.0];

/// Population-averaged logistic coefficients `(γ0, γ1)` implied by the
/// conditional model `logit P(y=1 | x, b) = b + β1 x` with `x ~ N(0,1)` and
/// `b` from `law`: the minimiser of the expected logistic deviance, found by
/// Newton's method with Gauss–Hermite integration over both `x` and `b`.
pub fn marginal_logistic_slope(law: &InterceptLaw, mix_prob: f64, beta1: f64, nodes: usize) -> (f64, f64) {
    let (gx, gw) = gauss_hermite(nodes);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let root2 = std::f64::consts::SQRT_2;
    let comps = law.components(mix_prob);
    // x-grid with probabilities and the marginal success probability m(x)
    let grid: Vec<(f64, f64, f64)> = gx
        .iter()
        .zip(&gw)
        .map(|(&u, &w)| {
            let x = root2 * u;
            let m: f64 = comps
                .iter()
                .map(|&(cw, mu, sd)| {
                    cw * gx
                        .iter()
                        .zip(&gw)
                        .map(|(&v, &wv)| wv * sigmoid(mu + root2 * sd * v + beta1 * x))
                        .sum::<f64>()
                        / sqrt_pi
                })
                .sum();
            (x, w / sqrt_pi, m)
        })
        .collect();
    let mut g = [0.0, beta1 * 0.5];
    for _ in 0..100 {
        let mut score = [0.0; 2];
        let mut info = [[0.0; 2]; 2];
        for &(x, w, m) in &grid {
            let p = sigmoid(g[0] + g[1] * x);
            let v = p * (1.0 - p);
            score[0] += w * (m - p);
            score[1] += w * (m - p) * x;
            info[0][0] += w * v;
            info[0][1] += w * v * x;
            info[1][1] += w * v * x * x;
        }
        let det = info[0][0] * info[1][1] - info[0][1] * info[0][1];
        let d0 = (info[1][1] * score[0] - info[0][1] * score[1]) / det;
        let d1 = (info[0][0] * score[1] - info[0][1] * score[0]) / det;
        g[0] += d0;
        g[1] += d1;
        if d0.abs().max(d1.abs()) < 1e-14 {
            break;
        }
    }
    (g[0], g[1])
}
