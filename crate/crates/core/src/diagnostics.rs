//! Convergence diagnostics and per-subject intercept exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mcmc::{InterceptPrior, Posterior};
use crate::stats::{mean, median, quantile, variance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Set when the chain has no variance; `value` is then the draw count.
    pub degenerate: bool,
}

/// Effective sample size by Geyer's initial monotone sequence estimator,
/// clipped to the number of draws.
pub fn effective_sample_size(draws: &[f64]) -> Result<Ess> {
    let n = draws.len();
    if n < 10 {
        return Err(domain(format!("need at least 10 draws for an ESS, got {n}")));
    }
    let m = mean(draws);
    let centred: Vec<f64> = draws.iter().map(|x| x - m).collect();
    let gamma0 = centred.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if !(gamma0 > 0.0) || gamma0 <= 1e-28 * m.abs().max(1.0).powi(2) {
        return Ok(Ess {
            value: n as f64,
            degenerate: true,
        });
    }
    let rho = |lag: usize| -> f64 {
        centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * gamma0)
    };
    let mut sum = 0.0;
    let mut previous = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(previous);
        sum += pair;
        previous = pair;
        k += 1;
    }
    let tau = 2.0 * sum - 1.0;
    let value = if tau > 0.0 { (n as f64 / tau).min(n as f64) } else { n as f64 };
    Ok(Ess {
        value,
        degenerate: false,
    })
}

/// Split-R̂: every chain is cut into halves (dropping a middle draw for odd
/// lengths) and the classic potential scale reduction is computed over the
/// halves.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.is_empty() {
        return Err(domain("need at least one chain for R-hat"));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(domain("chains must have equal lengths"));
    }
    if len < 20 {
        return Err(domain(format!("chains need at least 20 draws, got {len}")));
    }
    let half = len / 2;
    let splits: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[len - half..]]).collect();
    if splits.len() < 2 {
        return Err(domain("fewer than two splits"));
    }
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = mean(&splits.iter().map(|s| variance(s, 1)).collect::<Vec<_>>());
    let nf = half as f64;
    let b = nf * variance(&means, 1);
    if w <= 0.0 {
        return Ok(if b <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Posterior summary of one scalar parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
    /// `None` when the chains are too short to split.
    pub rhat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub level: f64,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub parameters: Vec<ParameterSummary>,
}

fn summarize_parameter(name: &str, chains: &[&[f64]], level: f64) -> ParameterSummary {
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let a = (1.0 - level) / 2.0;
    let ess = chains
        .iter()
        .map(|c| effective_sample_size(c).map_or(c.len() as f64, |e| e.value))
        .sum::<f64>()
        .min(pooled.len() as f64);
    ParameterSummary {
        name: name.to_string(),
        mean: mean(&pooled),
        median: median(&pooled),
        sd: variance(&pooled, 1).sqrt(),
        lower: quantile(&pooled, a),
        upper: quantile(&pooled, 1.0 - a),
        ess,
        rhat: split_rhat(chains).ok(),
    }
}

/// Mean, median, equal-tailed interval, ESS and split-R̂ for every
/// coefficient (plus the Weibull shape when present).
pub fn summarize_chains(post: &Posterior, level: f64) -> ChainSummary {
    let mut parameters: Vec<ParameterSummary> = (0..post.n_parameters())
        .map(|j| summarize_parameter(&post.names[j], &post.coefficient_chains(j), level))
        .collect();
    if post.shape_draws().is_some() {
        let chains: Vec<&[f64]> = post.chains.iter().map(|c| c.shape.as_slice()).collect();
        parameters.push(summarize_parameter("shape", &chains, level));
    }
    ChainSummary {
        level,
        chains: post.n_chains(),
        draws_per_chain: post.draws_per_chain(),
        parameters,
    }
}

/// Posterior medians of `β0 + μ_i` (Mean-DPM only).
pub fn mu_medians(post: &Posterior) -> Result<Vec<f64>> {
    if !matches!(post.intercept_prior, InterceptPrior::MeanDpm { .. }) {
        return Err(Error::Config(format!("μ_i requested from a {} fit", post.intercept_prior.kind())));
    }
    Ok((0..post.n_subjects())
        .map(|i| {
            let d: Vec<f64> = post
                .chains
                .iter()
                .flat_map(|c| c.coefficients[0].iter().zip(&c.atoms[i]).map(|(b0, mu)| b0 + mu))
                .collect();
            median(&d)
        })
        .collect())
}

/// Posterior medians of `σ_i` (Sigma-DPM only).
pub fn sigma_medians(post: &Posterior) -> Result<Vec<f64>> {
    if !matches!(post.intercept_prior, InterceptPrior::SigmaDpm { .. }) {
        return Err(Error::Config(format!("σ_i requested from a {} fit", post.intercept_prior.kind())));
    }
    Ok((0..post.n_subjects()).map(|i| median(&post.subject_atom_draws(i)).sqrt()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterceptRow {
    pub subject: usize,
    pub true_b0i: Option<f64>,
    /// Posterior median of `β0 + β0i`.
    pub est_b0i: f64,
    pub mu_i: Option<f64>,
    pub sigma_i: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterceptExport {
    pub rows: Vec<InterceptRow>,
    pub correlation: Option<f64>,
    pub rmse: Option<f64>,
}

pub const INTERCEPT_CSV_HEADER: &str = "subject,true_b0i,est_b0i,mu_i,sigma_i";

impl InterceptExport {
    /// CSV with header `subject,true_b0i,est_b0i,mu_i,sigma_i`; missing
    /// values are empty fields.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(out, "{INTERCEPT_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.subject,
                opt(r.true_b0i),
                r.est_b0i,
                opt(r.mu_i),
                opt(r.sigma_i)
            )?;
        }
        Ok(())
    }
}

/// Per-subject figure data. With `truth`, also the correlation and RMSE of
/// estimated against true intercepts.
pub fn export_intercept_diagnostics(post: &Posterior, truth: Option<&[f64]>) -> Result<InterceptExport> {
    if !post.has_subject_intercepts() {
        return Err(Error::Config("the marginal model has no subject intercepts".into()));
    }
    let n = post.n_subjects();
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::Data(format!("{} true intercepts for {n} subjects", t.len())));
        }
    }
    let est: Vec<f64> = (0..n).map(|i| median(&post.subject_intercept_draws(i))).collect();
    let mu = mu_medians(post).ok();
    let sigma = sigma_medians(post).ok();
    let rows = (0..n)
        .map(|i| InterceptRow {
            subject: i,
            true_b0i: truth.map(|t| t[i]),
            est_b0i: est[i],
            mu_i: mu.as_ref().map(|m| m[i]),
            sigma_i: sigma.as_ref().map(|s| s[i]),
        })
        .collect();
    Ok(InterceptExport {
        rows,
        correlation: truth.map(|t| correlation(t, &est)),
        rmse: truth.map(|t| rmse(t, &est)),
    })
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}
