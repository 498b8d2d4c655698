//! Flat `key = value` configuration. Values are resolved in three layers,
//! defaults < config file < command line, then parsed into a [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dpmreg::dpm::{BaseMeasure, DpmConfig};
use dpmreg::sim::{FitSettings, InterceptLaw, Model, OutcomeFamily, ScenarioSpec, LI_GRID, MU_GAP_GRID, SIGMA_RATIO_GRID};
use dpmreg::{McmcSettings, Priors};
use sha2::{Digest, Sha256};

use crate::ingest::Schema;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Command::Simulate),
            "fit" => Ok(Command::Fit),
            "sweep" => Ok(Command::Sweep),
            _ => bail!("unknown command '{s}'"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    Li,
    MuGap,
    SigmaRatio,
}

impl Grid {
    pub fn name(&self) -> &'static str {
        match self {
            Grid::Li => "li",
            Grid::MuGap => "mu-gap",
            Grid::SigmaRatio => "sigma-ratio",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "li" => Ok(Grid::Li),
            "mu-gap" => Ok(Grid::MuGap),
            "sigma-ratio" => Ok(Grid::SigmaRatio),
            _ => bail!("unknown grid '{s}' (expected li, mu-gap or sigma-ratio)"),
        }
    }

    fn default_values(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        match self {
            Grid::Li => join(LI_GRID.iter().map(|v| v.to_string()).collect()),
            Grid::MuGap => join(MU_GAP_GRID.iter().map(|v| v.to_string()).collect()),
            Grid::SigmaRatio => join(SIGMA_RATIO_GRID.iter().map(|v| v.to_string()).collect()),
        }
    }

    fn default_scenario(&self) -> &'static str {
        match self {
            Grid::Li | Grid::MuGap => "mix-means",
            Grid::SigmaRatio => "mix-sigmas",
        }
    }
}

/// Every key a config may set. Anything else is rejected.
pub const KEYS: &[&str] = &[
    "alpha",
    "alpha_prior",
    "aux_components",
    "beta1",
    "burn_in",
    "censor_quantile",
    "chains",
    "diagnostics",
    "family",
    "grid",
    "input",
    "iterations",
    "level",
    "li",
    "mean_base_sd",
    "mix_prob",
    "models",
    "out",
    "quad_points",
    "reps",
    "scenario",
    "schema",
    "sd_intercept",
    "sd_random",
    "sd_slopes",
    "seed",
    "shape",
    "shape_loc",
    "shape_scale",
    "sigma_base_loc",
    "sigma_base_scale",
    "subjects",
    "thin",
    "threads",
    "values",
];

pub type ConfigMap = BTreeMap<String, String>;

/// Parse a flat config file: one `key = value` per line, `#` comments.
pub fn parse_config_text(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected 'key = value', got '{raw}'", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        check_key(k).with_context(|| format!("config line {}", i + 1))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            bail!("config line {}: key '{k}' given twice", i + 1);
        }
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config_text(&text).with_context(|| format!("in {}", path.display()))
}

fn check_key(k: &str) -> Result<()> {
    if KEYS.contains(&k) {
        Ok(())
    } else {
        bail!("unknown config key '{k}'")
    }
}

/// `key=value` override from the command line.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got '{s}'"))?;
    check_key(k.trim())?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn defaults(command: Command) -> ConfigMap {
    let mcmc_chains = if command == Command::Fit { "4" } else { "1" };
    let mut d: Vec<(&str, &str)> = vec![
        ("alpha", "1"),
        ("alpha_prior", "none"),
        ("aux_components", "3"),
        ("burn_in", "2000"),
        ("chains", mcmc_chains),
        ("iterations", "4000"),
        ("level", "0.95"),
        ("mean_base_sd", "2"),
        ("out", "dpmreg-out"),
        ("quad_points", "15"),
        ("sd_intercept", "10"),
        ("sd_random", "0.5"),
        ("sd_slopes", "10"),
        ("shape_loc", "0"),
        ("shape_scale", "1"),
        ("sigma_base_loc", "0"),
        ("sigma_base_scale", "1"),
        ("thin", "2"),
        ("threads", "auto"),
    ];
    match command {
        Command::Simulate | Command::Sweep => d.extend([
            ("beta1", "1"),
            ("censor_quantile", "none"),
            ("li", "12"),
            ("mix_prob", "0.5"),
            ("shape", "1"),
            ("subjects", "150"),
        ]),
        Command::Fit => d.push(("seed", "1")),
    }
    match command {
        Command::Simulate => d.extend([("diagnostics", "true"), ("family", "binary"), ("reps", "100"), ("scenario", "normal")]),
        Command::Sweep => d.extend([("family", "survival"), ("reps", "50"), ("models", "mean-dpm,sigma-dpm")]),
        Command::Fit => {}
    }
    d.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Layer defaults, file and command-line values; later layers win.
pub fn resolve(command: Command, file: Option<ConfigMap>, cli: ConfigMap) -> Result<ConfigMap> {
    let mut map = defaults(command);
    for layer in file.into_iter().chain(std::iter::once(cli)) {
        for (k, v) in layer {
            check_key(&k)?;
            map.insert(k, v);
        }
    }
    // defaults that depend on other keys
    if command == Command::Sweep {
        if let Some(g) = map.get("grid").map(|g| Grid::parse(g)).transpose()? {
            map.entry("scenario".into()).or_insert_with(|| g.default_scenario().into());
            map.entry("values".into()).or_insert_with(|| g.default_values());
        }
    }
    if !map.contains_key("models") {
        let family = match command {
            Command::Fit => map.get("schema").cloned().unwrap_or_default(),
            _ => map.get("family").cloned().unwrap_or_default(),
        };
        if !family.is_empty() {
            map.insert("models".into(), "all".into());
        }
    }
    Ok(map)
}

/// The resolved map as canonical `key = value` text, sorted by key.
pub fn canonical_text(map: &ConfigMap) -> String {
    let mut s = String::new();
    for (k, v) in map {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// SHA-256 of the canonical text, hex encoded.
pub fn config_hash(map: &ConfigMap) -> String {
    Sha256::digest(canonical_text(map).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Option<ScenarioSpec>,
    pub grid: Option<(Grid, Vec<f64>)>,
    pub input: Option<(PathBuf, Schema)>,
    pub models: Vec<Model>,
    pub reps: usize,
    pub fit: FitSettings,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub diagnostics: bool,
    /// The fully resolved key/value map this config was built from.
    pub resolved: ConfigMap,
}

struct Lookup<'a>(&'a ConfigMap);

impl Lookup<'_> {
    fn raw(&self, k: &str) -> Result<&str> {
        self.0.get(k).map(String::as_str).ok_or_else(|| anyhow!("missing required setting '{k}'"))
    }

    fn num<T: std::str::FromStr>(&self, k: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(k)?;
        v.parse().map_err(|e| anyhow!("setting '{k}': cannot parse '{v}': {e}"))
    }

    fn list<T: std::str::FromStr>(&self, k: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(k)?
            .split(',')
            .map(|v| v.trim().parse().map_err(|e| anyhow!("setting '{k}': cannot parse '{v}': {e}")))
            .collect()
    }
}

fn parse_family(map: &Lookup) -> Result<OutcomeFamily> {
    match map.raw("family")? {
        "binary" => Ok(OutcomeFamily::Binary),
        "survival" => {
            let censor_quantile = match map.raw("censor_quantile")? {
                "none" => None,
                _ => Some(map.num("censor_quantile")?),
            };
            Ok(OutcomeFamily::Survival {
                shape: map.num("shape")?,
                censor_quantile,
            })
        }
        f => bail!("unknown family '{f}' (expected binary or survival)"),
    }
}

fn parse_scenario(map: &Lookup) -> Result<ScenarioSpec> {
    let family = parse_family(map)?;
    let mut spec = match map.raw("scenario")? {
        "normal" => ScenarioSpec::normal(family),
        "mix-means" => ScenarioSpec::mix_means(family),
        "mix-sigmas" => ScenarioSpec::mix_sigmas(family),
        s => bail!("unknown scenario '{s}' (expected normal, mix-means or mix-sigmas)"),
    };
    spec.n_subjects = map.num("subjects")?;
    spec.li = map.num("li")?;
    spec.beta1 = map.num("beta1")?;
    spec.mix_prob = map.num("mix_prob")?;
    spec.validate()?;
    Ok(spec)
}

fn parse_models(map: &Lookup, family_binary: bool) -> Result<Vec<Model>> {
    let family: &[Model] = if family_binary { &Model::BINARY } else { &Model::SURVIVAL };
    let raw = map.raw("models")?;
    if raw == "all" {
        return Ok(family.to_vec());
    }
    let mut models = Vec::new();
    for name in raw.split(',').map(str::trim) {
        let m = Model::parse(name)?;
        if !family.contains(&m) {
            bail!("model '{name}' does not apply to {} outcomes", if family_binary { "binary" } else { "survival" });
        }
        if models.contains(&m) {
            bail!("model '{name}' listed twice");
        }
        models.push(m);
    }
    Ok(models)
}

fn parse_fit_settings(map: &Lookup) -> Result<FitSettings> {
    let mcmc = McmcSettings::new(map.num("iterations")?, map.num("burn_in")?, map.num("thin")?, 0, map.num("chains")?)?;
    let priors = Priors {
        sd_intercept: map.num("sd_intercept")?,
        sd_slopes: map.num("sd_slopes")?,
        sd_random: map.num("sd_random")?,
        shape_loc: map.num("shape_loc")?,
        shape_scale: map.num("shape_scale")?,
    };
    priors.validate()?;
    let alpha: f64 = map.num("alpha")?;
    let aux: usize = map.num("aux_components")?;
    let mut mean_dpm = DpmConfig::new(alpha, BaseMeasure::NormalMean { sd: map.num("mean_base_sd")? }, aux)?;
    let mut sigma_dpm = DpmConfig::new(
        alpha,
        BaseMeasure::LogNormalSigma {
            loc: map.num("sigma_base_loc")?,
            scale: map.num("sigma_base_scale")?,
        },
        aux,
    )?;
    let ap = map.raw("alpha_prior")?;
    if ap != "none" {
        let v: Vec<f64> = map.list("alpha_prior")?;
        let [shape, rate] = v[..] else {
            bail!("alpha_prior must be 'none' or 'shape,rate', got '{ap}'");
        };
        mean_dpm = mean_dpm.with_alpha_prior(shape, rate);
        sigma_dpm = sigma_dpm.with_alpha_prior(shape, rate);
    }
    let level: f64 = map.num("level")?;
    if !(level > 0.0 && level < 1.0) {
        bail!("level must be in (0,1), got {level}");
    }
    let quad_points: usize = map.num("quad_points")?;
    if !(5..=150).contains(&quad_points) {
        bail!("quad_points must be between 5 and 150, got {quad_points}");
    }
    Ok(FitSettings {
        mcmc,
        priors,
        mean_dpm,
        sigma_dpm,
        quad_points,
        level,
    })
}

impl RunConfig {
    pub fn from_map(command: Command, resolved: ConfigMap) -> Result<Self> {
        let map = Lookup(&resolved);
        let fit = parse_fit_settings(&map)?;
        let threads = match map.raw("threads")? {
            "auto" => None,
            _ => match map.num::<usize>("threads")? {
                0 => bail!("threads must be positive or 'auto'"),
                t => Some(t),
            },
        };
        let seed = match command {
            Command::Simulate | Command::Sweep => map.num("seed").context("simulations need an explicit seed")?,
            Command::Fit => map.num("seed")?,
        };
        let mut cfg = RunConfig {
            command,
            scenario: None,
            grid: None,
            input: None,
            models: Vec::new(),
            reps: 0,
            fit,
            seed,
            out: PathBuf::from(map.raw("out")?),
            threads,
            diagnostics: false,
            resolved: resolved.clone(),
        };
        match command {
            Command::Simulate | Command::Sweep => {
                let spec = parse_scenario(&map)?;
                cfg.models = parse_models(&map, spec.family == OutcomeFamily::Binary)?;
                cfg.reps = map.num("reps")?;
                if cfg.reps == 0 {
                    bail!("reps must be at least 1");
                }
                cfg.scenario = Some(spec);
                if command == Command::Simulate {
                    cfg.diagnostics = map.num("diagnostics")?;
                } else {
                    let grid = Grid::parse(map.raw("grid")?)?;
                    let values: Vec<f64> = map.list("values")?;
                    if grid == Grid::Li && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                        bail!("li values must be positive integers");
                    }
                    if grid == Grid::MuGap && !matches!(spec.law, InterceptLaw::MixMeans { .. }) {
                        bail!("the mu-gap grid needs scenario mix-means");
                    }
                    if grid == Grid::SigmaRatio && !matches!(spec.law, InterceptLaw::MixSigmas { .. }) {
                        bail!("the sigma-ratio grid needs scenario mix-sigmas");
                    }
                    cfg.grid = Some((grid, values));
                }
            }
            Command::Fit => {
                let path = PathBuf::from(map.raw("input")?);
                if !path.is_file() {
                    bail!("input file {} does not exist", path.display());
                }
                let schema = Schema::parse(map.raw("schema")?)?;
                cfg.models = parse_models(&map, schema == Schema::Binary)?;
                cfg.input = Some((path, schema));
            }
        }
        Ok(cfg)
    }
}
