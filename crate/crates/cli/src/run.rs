//! Subcommand drivers. Each writes its artifacts under `out` and returns
//! the manifest it wrote.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dpmreg::diagnostics::{export_intercept_diagnostics, summarize_chains};
use dpmreg::logistic::{fit_glm_irls, fit_glmm_quadrature, sample_bayes_logistic, sample_hier_logistic_normal, sample_logistic_mean_dpm, sample_logistic_sigma_dpm};
use dpmreg::sim::{
    fit_seed, model_fits, replication_data, run_replications, sample_posterior, sweep_li, sweep_mu_gap, sweep_sigma_ratio, Estimator, FitSettings, Model,
    SummaryTable, SweepPoint,
};
use dpmreg::stats::normal_quantile;
use dpmreg::survival::{fit_cox, fit_weibull_aft, sample_bayes_weibull_marginal, sample_hier_weibull_normal, sample_weibull_mean_dpm, sample_weibull_sigma_dpm};
use dpmreg::{McmcSettings, Posterior};

use crate::config::{canonical_text, config_hash, read_config_file, Command, Grid, RunConfig};
use crate::ingest::{ingest_panel_csv, Panel, Schema};
use crate::output::{
    csv_writer, ratio_header, read_replication_rows, write_json, write_replication_rows, write_summary_rows, FitTiming, Manifest,
};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPLICATIONS_CSV: &str = "replications.csv";
pub const COEFFICIENTS_CSV: &str = "coefficients.csv";
pub const CONFIG_TXT: &str = "config.txt";

pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    let start = Instant::now();
    let mut manifest = match cfg.command {
        Command::Simulate => simulate(cfg)?,
        Command::Sweep => sweep(cfg)?,
        Command::Fit => fit(cfg)?,
    };
    std::fs::write(cfg.out.join(CONFIG_TXT), canonical_text(&cfg.resolved))?;
    manifest.outputs.insert(0, CONFIG_TXT.into());
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

fn manifest(cfg: &RunConfig) -> Manifest {
    Manifest {
        command: cfg.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: config_hash(&cfg.resolved),
        config: cfg.resolved.clone(),
        outputs: Vec::new(),
        failures: 0,
        wall_seconds: 0.0,
        fits: Vec::new(),
    }
}

fn estimators(cfg: &RunConfig) -> Vec<dpmreg::sim::ModelFit> {
    model_fits(&cfg.models, &cfg.fit)
}

fn simulate(cfg: &RunConfig) -> Result<Manifest> {
    let spec = cfg.scenario.expect("validated");
    let fits = estimators(cfg);
    let refs: Vec<&dyn Estimator> = fits.iter().map(|m| m as &dyn Estimator).collect();
    let run = run_replications(&spec, &refs, cfg.reps, cfg.seed, cfg.threads)?;
    let mut m = manifest(cfg);

    let mut w = csv_writer(&cfg.out.join(SUMMARY_CSV))?;
    write_summary_rows(&mut w, None, &run.summary.rows, true)?;
    w.flush()?;
    write_json(&cfg.out.join(SUMMARY_JSON), &run.summary)?;
    let mut w = csv_writer(&cfg.out.join(REPLICATIONS_CSV))?;
    write_replication_rows(&mut w, None, &run.records, true)?;
    w.flush()?;
    m.outputs.extend([SUMMARY_CSV, SUMMARY_JSON, REPLICATIONS_CSV].map(String::from));

    for r in &run.records {
        m.fits.push(FitTiming {
            grid_value: None,
            replication: Some(r.replication),
            model: r.model.clone(),
            seconds: r.seconds,
            error: r.outcome.as_ref().err().cloned(),
        });
    }
    m.failures = run.records.iter().filter(|r| r.outcome.is_err()).count();

    if cfg.diagnostics {
        // Replay the first replication's Bayesian fits with the same seeds.
        let data = replication_data(&spec, cfg.seed, 0)?;
        for &model in cfg.models.iter().filter(|m| m.is_bayesian()) {
            let seed = fit_seed(cfg.seed, 0, model.stream_key());
            if let Ok(post) = sample_posterior(model, &data, &cfg.fit, seed) {
                m.outputs.extend(write_posterior_diagnostics(&cfg.out, model.id(), &post, Some(&data.truth().intercepts), cfg.fit.level)?);
            }
        }
    }
    Ok(m)
}

fn write_posterior_diagnostics(dir: &Path, id: &str, post: &Posterior, truth: Option<&[f64]>, level: f64) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let chains = format!("chains_{id}.json");
    write_json(&dir.join(&chains), &summarize_chains(post, level))?;
    written.push(chains);
    if post.has_subject_intercepts() {
        let name = format!("intercepts_{id}.csv");
        let export = export_intercept_diagnostics(post, truth)?;
        let file = std::fs::File::create(dir.join(&name))?;
        export.write_csv(std::io::BufWriter::new(file))?;
        written.push(name);
    }
    Ok(written)
}

#[derive(serde::Serialize)]
struct SweepJson<'a> {
    grid: &'a str,
    value: f64,
    summary: &'a SummaryTable,
}

fn sweep(cfg: &RunConfig) -> Result<Manifest> {
    let spec = cfg.scenario.expect("validated");
    let (grid, values) = cfg.grid.clone().expect("validated");
    let fits = estimators(cfg);
    let refs: Vec<&dyn Estimator> = fits.iter().map(|m| m as &dyn Estimator).collect();
    let points: Vec<SweepPoint> = match grid {
        Grid::Li => {
            let li: Vec<usize> = values.iter().map(|&v| v as usize).collect();
            sweep_li(&spec, &li, &refs, cfg.reps, cfg.seed, cfg.threads)?
        }
        Grid::MuGap => sweep_mu_gap(&spec, &values, &refs, cfg.reps, cfg.seed, cfg.threads)?,
        Grid::SigmaRatio => sweep_sigma_ratio(&spec, &values, &refs, cfg.reps, cfg.seed, cfg.threads)?,
    };
    let mut m = manifest(cfg);
    let gname = grid.name();
    let mut sw = csv_writer(&cfg.out.join(SUMMARY_CSV))?;
    let mut rw = csv_writer(&cfg.out.join(REPLICATIONS_CSV))?;
    for (k, p) in points.iter().enumerate() {
        write_summary_rows(&mut sw, Some((gname, p.value)), &p.run.summary.rows, k == 0)?;
        write_replication_rows(&mut rw, Some((gname, p.value)), &p.run.records, k == 0)?;
        for r in &p.run.records {
            m.fits.push(FitTiming {
                grid_value: Some(p.value),
                replication: Some(r.replication),
                model: r.model.clone(),
                seconds: r.seconds,
                error: r.outcome.as_ref().err().cloned(),
            });
        }
    }
    sw.flush()?;
    rw.flush()?;
    let json: Vec<SweepJson> = points
        .iter()
        .map(|p| SweepJson {
            grid: gname,
            value: p.value,
            summary: &p.run.summary,
        })
        .collect();
    write_json(&cfg.out.join(SUMMARY_JSON), &json)?;
    m.outputs.extend([SUMMARY_CSV, SUMMARY_JSON, REPLICATIONS_CSV].map(String::from));
    m.failures = m.fits.iter().filter(|f| f.error.is_some()).count();
    Ok(m)
}

/// One row of the fit subcommand's coefficient table.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientRow {
    pub model: String,
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// `exp` of the point estimate and interval ends; `None` for intercepts.
    pub ratio: Option<[f64; 3]>,
}

fn is_intercept(name: &str) -> bool {
    name == "(intercept)"
}

fn wald_rows(model: Model, names: &[String], coefs: &[f64], se: impl Fn(usize) -> f64, level: f64) -> Vec<CoefficientRow> {
    let z = normal_quantile(0.5 + level / 2.0);
    names
        .iter()
        .zip(coefs)
        .enumerate()
        .map(|(j, (name, &b))| {
            let s = se(j);
            let (lo, hi) = (b - z * s, b + z * s);
            CoefficientRow {
                model: model.id().into(),
                parameter: name.clone(),
                estimate: b,
                std_error: s,
                lower: lo,
                upper: hi,
                ratio: (!is_intercept(name)).then(|| [b.exp(), lo.exp(), hi.exp()]),
            }
        })
        .collect()
}

/// Posterior rows: mean and SD, equal-tailed interval, and the ratio as the
/// exponentiated posterior median with exponentiated interval ends.
fn posterior_rows(model: Model, post: &Posterior, level: f64) -> Vec<CoefficientRow> {
    (0..post.n_parameters())
        .map(|j| {
            let draws = post.coefficient_draws(j);
            let (lo, hi) = post.credible_interval(j, level);
            let name = &post.names[j];
            CoefficientRow {
                model: model.id().into(),
                parameter: name.clone(),
                estimate: post.posterior_mean(j),
                std_error: dpmreg::stats::variance(&draws, 1).sqrt(),
                lower: lo,
                upper: hi,
                ratio: (!is_intercept(name)).then(|| [post.posterior_median(j).exp(), lo.exp(), hi.exp()]),
            }
        })
        .collect()
}

/// Fit `model` to an ingested panel; Bayesian models also return their
/// posterior.
pub fn fit_panel(model: Model, panel: &Panel, settings: &FitSettings, seed: u64) -> Result<(Vec<CoefficientRow>, Option<Posterior>)> {
    let mcmc = McmcSettings { seed, ..settings.mcmc };
    let pr = &settings.priors;
    let level = settings.level;
    let post = match (model, panel) {
        (Model::Glm | Model::Gee, Panel::Binary(p)) => {
            let f = fit_glm_irls(p)?;
            let robust = model == Model::Gee;
            let se = |j| if robust { f.robust_se(j) } else { f.naive_se(j) };
            return Ok((wald_rows(model, &f.names, &f.coefficients, se, level), None));
        }
        (Model::Glmm, Panel::Binary(p)) => {
            let g = fit_glmm_quadrature(p, settings.quad_points)?;
            if !g.fit.converged {
                bail!("GLMM did not converge after {} iterations", g.fit.iterations);
            }
            return Ok((wald_rows(model, &g.fit.names, &g.fit.coefficients, |j| g.fit.naive_se(j), level), None));
        }
        (Model::Cox, Panel::Survival(p)) => {
            let f = fit_cox(p)?;
            return Ok((wald_rows(model, &f.names, &f.coefficients, |j| f.robust_se(j), level), None));
        }
        (Model::WeibullAft, Panel::Survival(p)) => {
            let f = fit_weibull_aft(p)?;
            if !f.fit.converged {
                bail!("Weibull AFT did not converge after {} iterations", f.fit.iterations);
            }
            let names = &f.fit.names[..f.ph_coefficients.len()];
            return Ok((wald_rows(model, names, &f.ph_coefficients, |j| f.ph_robust_se(j), level), None));
        }
        (Model::Marginal, Panel::Binary(p)) => sample_bayes_logistic(p, pr, &mcmc)?,
        (Model::HierNormal, Panel::Binary(p)) => sample_hier_logistic_normal(p, pr, &mcmc)?,
        (Model::MeanDpm, Panel::Binary(p)) => sample_logistic_mean_dpm(p, &settings.mean_dpm, pr, &mcmc)?,
        (Model::SigmaDpm, Panel::Binary(p)) => sample_logistic_sigma_dpm(p, &settings.sigma_dpm, pr, &mcmc)?,
        (Model::Marginal, Panel::Survival(p)) => sample_bayes_weibull_marginal(p, pr, &mcmc)?,
        (Model::HierNormal, Panel::Survival(p)) => sample_hier_weibull_normal(p, pr, &mcmc)?,
        (Model::MeanDpm, Panel::Survival(p)) => sample_weibull_mean_dpm(p, &settings.mean_dpm, pr, &mcmc)?,
        (Model::SigmaDpm, Panel::Survival(p)) => sample_weibull_sigma_dpm(p, &settings.sigma_dpm, pr, &mcmc)?,
        (m, _) => bail!("model '{}' does not apply to this schema", m.id()),
    };
    Ok((posterior_rows(model, &post, level), Some(post)))
}

fn fit(cfg: &RunConfig) -> Result<Manifest> {
    let (path, schema) = cfg.input.clone().expect("validated");
    let ingested = ingest_panel_csv(&path, schema)?;
    let mut m = manifest(cfg);
    let mut rows = Vec::new();
    for &model in &cfg.models {
        let start = Instant::now();
        let seed = fit_seed(cfg.seed, 0, model.stream_key());
        let result = fit_panel(model, &ingested.panel, &cfg.fit, seed);
        let seconds = start.elapsed().as_secs_f64();
        let error = match result {
            Ok((r, post)) => {
                rows.extend(r);
                if let Some(post) = post {
                    m.outputs.extend(write_posterior_diagnostics(&cfg.out, model.id(), &post, None, cfg.fit.level)?);
                }
                None
            }
            Err(e) => Some(format!("{e:#}")),
        };
        m.fits.push(FitTiming {
            grid_value: None,
            replication: None,
            model: model.id().into(),
            seconds,
            error,
        });
    }
    m.failures = m.fits.iter().filter(|f| f.error.is_some()).count();
    let mut w = csv_writer(&cfg.out.join(COEFFICIENTS_CSV))?;
    write_coefficients(&mut w, &rows, schema == Schema::Survival)?;
    w.flush()?;
    m.outputs.insert(0, COEFFICIENTS_CSV.into());
    Ok(m)
}

pub fn write_coefficients(w: &mut csv::Writer<impl std::io::Write>, rows: &[CoefficientRow], survival: bool) -> Result<()> {
    w.write_record(ratio_header(survival))?;
    for r in rows {
        let mut rec = vec![
            r.model.clone(),
            r.parameter.clone(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ];
        match r.ratio {
            Some(v) => rec.extend(v.iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat_n(String::new(), 3)),
        }
        w.write_record(rec)?;
    }
    Ok(())
}

/// Re-derive the summary table of a simulate or sweep run from its raw
/// replication CSV and return it as CSV text; for fit runs, return the
/// coefficient table. Fails if the manifest's config hash does not match
/// its recorded config.
pub fn summarize(manifest_path: &Path) -> Result<String> {
    let m = Manifest::read(manifest_path)?;
    if config_hash(&m.config) != m.config_hash {
        bail!("manifest config hash does not match its recorded config");
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let command = Command::parse(&m.command)?;
    if command == Command::Fit {
        return std::fs::read_to_string(dir.join(COEFFICIENTS_CSV)).context("cannot read the coefficient table");
    }
    let truth: f64 = m.config.get("beta1").context("manifest lacks beta1")?.parse()?;
    let grid = m.config.get("grid").cloned();
    let records = read_replication_rows(&dir.join(REPLICATIONS_CSV), grid.as_deref())?;
    let mut buf = csv::Writer::from_writer(Vec::new());
    // group by grid value, keeping file order
    let mut values: Vec<Option<f64>> = Vec::new();
    for (v, _) in &records {
        if !values.contains(v) {
            values.push(*v);
        }
    }
    for (k, v) in values.iter().enumerate() {
        let recs: Vec<_> = records.iter().filter(|(x, _)| x == v).map(|(_, r)| r.clone()).collect();
        let table = SummaryTable::from_records(&recs, truth);
        let prefix = grid.as_deref().zip(*v);
        write_summary_rows(&mut buf, prefix, &table.rows, k == 0)?;
    }
    Ok(String::from_utf8(buf.into_inner()?)?)
}

/// Build a config from an optional file plus command-line pairs.
pub fn load_config(command: Command, file: Option<&Path>, cli: crate::config::ConfigMap) -> Result<RunConfig> {
    let file = file.map(read_config_file).transpose()?;
    let map = crate::config::resolve(command, file, cli)?;
    RunConfig::from_map(command, map)
}
