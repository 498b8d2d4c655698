use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dpmreg_cli::config::{parse_override, Command, ConfigMap};
use dpmreg_cli::run::{load_config, run, summarize};

#[derive(Parser, Debug)]
#[command(name = "dpmreg", version, about = "Simulation studies and panel fits for DPM random-intercept regression")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Monte-Carlo study of one scenario.
    Simulate(Common),
    /// Fit models to a panel CSV.
    Fit(Common),
    /// Repeat a simulation over a grid of scenario settings.
    Sweep(Common),
    /// Rebuild the summary table of a finished run from its manifest.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Flags shared by the run subcommands. Each is sugar for a config key.
#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    subjects: Option<String>,
    #[arg(long)]
    li: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long = "burn-in")]
    burn_in: Option<String>,
    #[arg(long)]
    thin: Option<String>,
    #[arg(long)]
    chains: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated grid values.
    #[arg(long)]
    values: Option<String>,
}

impl Common {
    fn overrides(&self) -> Result<ConfigMap> {
        let mut map = ConfigMap::new();
        for s in &self.set {
            let (k, v) = parse_override(s)?;
            map.insert(k, v);
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("scenario", self.scenario.clone()),
            ("family", self.family.clone()),
            ("models", self.models.clone()),
            ("reps", self.reps.clone()),
            ("subjects", self.subjects.clone()),
            ("li", self.li.clone()),
            ("seed", self.seed.clone()),
            ("out", path(&self.out)),
            ("threads", self.threads.clone()),
            ("iterations", self.iterations.clone()),
            ("burn_in", self.burn_in.clone()),
            ("thin", self.thin.clone()),
            ("chains", self.chains.clone()),
            ("input", path(&self.input)),
            ("schema", self.schema.clone()),
            ("grid", self.grid.clone()),
            ("values", self.values.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(map)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Summarize { manifest } => {
            print!("{}", summarize(&manifest)?);
            return Ok(());
        }
    };
    let cfg = load_config(command, common.config.as_deref(), common.overrides()?)?;
    let manifest = run(&cfg)?;
    let mut err = std::io::stderr().lock();
    writeln!(err, "{} finished in {:.1}s; {} fit(s) failed", manifest.command, manifest.wall_seconds, manifest.failures)?;
    for f in &manifest.outputs {
        writeln!(err, "  {}", cfg.out.join(f).display())?;
    }
    Ok(())
}
