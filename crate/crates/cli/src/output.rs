//! CSV and JSON writers. Column lists are fixed; see the README.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dpmreg::sim::{FitOutcome, ReplicationRecord, SummaryRow};
use serde::{Deserialize, Serialize};

use crate::config::ConfigMap;

pub const SUMMARY_HEADER: [&str; 8] = ["model", "truth", "mean", "bias", "sd", "mse", "successes", "failures"];
pub const REPLICATION_HEADER: [&str; 9] = ["replication", "model", "status", "estimate", "median", "se", "lower", "upper", "error"];
pub const COEFFICIENT_HEADER: [&str; 7] = ["model", "parameter", "estimate", "std_error", "lower", "upper", "ratio"];

/// Column names of the ratio triple: relative risks for survival fits,
/// odds ratios for binary fits.
pub fn ratio_header(survival: bool) -> [&'static str; 9] {
    let mut h = ["model", "parameter", "estimate", "std_error", "lower", "upper", "", "", ""];
    let names = if survival {
        ["relative_risk", "rr_lower", "rr_upper"]
    } else {
        ["odds_ratio", "or_lower", "or_upper"]
    };
    h[6..].copy_from_slice(&names);
    h
}

fn num(x: f64) -> String {
    x.to_string()
}

fn with_prefix<const N: usize>(prefix: &Option<(&str, f64)>, header: [&str; N]) -> Vec<String> {
    prefix.iter().map(|(g, _)| g.to_string()).chain(header.iter().map(|s| s.to_string())).collect()
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

/// With `prefix = Some((grid, value))` every row gains a leading column
/// named after the grid.
pub fn write_summary_rows(w: &mut csv::Writer<impl std::io::Write>, prefix: Option<(&str, f64)>, rows: &[SummaryRow], header: bool) -> Result<()> {
    if header {
        w.write_record(with_prefix(&prefix, SUMMARY_HEADER))?;
    }
    for r in rows {
        let mut rec: Vec<String> = prefix.iter().map(|(_, v)| num(*v)).collect();
        rec.extend([
            r.model.clone(),
            num(r.truth),
            num(r.mean),
            num(r.bias()),
            num(r.sd),
            num(r.mse),
            r.successes.to_string(),
            r.failures.to_string(),
        ]);
        w.write_record(rec)?;
    }
    Ok(())
}

pub fn write_replication_rows(
    w: &mut csv::Writer<impl std::io::Write>,
    prefix: Option<(&str, f64)>,
    records: &[ReplicationRecord],
    header: bool,
) -> Result<()> {
    if header {
        w.write_record(with_prefix(&prefix, REPLICATION_HEADER))?;
    }
    for r in records {
        let mut rec: Vec<String> = prefix.iter().map(|(_, v)| num(*v)).collect();
        rec.push(r.replication.to_string());
        rec.push(r.model.clone());
        match &r.outcome {
            Ok(o) => rec.extend(["ok".into(), num(o.estimate), num(o.median), num(o.se), num(o.lower), num(o.upper), String::new()]),
            Err(e) => {
                rec.extend(["failed".into()]);
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(e.clone());
            }
        }
        w.write_record(rec)?;
    }
    Ok(())
}

/// Parse the replication CSV back into records; `prefix` names the grid
/// column of sweep files. Returns `(grid value, record)` pairs.
pub fn read_replication_rows(path: &Path, prefix: Option<&str>) -> Result<Vec<(Option<f64>, ReplicationRecord)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let off = usize::from(prefix.is_some());
    let f = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
        let v = rec.get(i + off).unwrap_or("");
        v.parse().with_context(|| format!("{}: bad number '{v}'", path.display()))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let value = match prefix {
            Some(_) => Some(rec[0].parse::<f64>().with_context(|| format!("{}: bad grid value '{}'", path.display(), &rec[0]))?),
            None => None,
        };
        let outcome = if &rec[off + 2] == "ok" {
            Ok(FitOutcome {
                estimate: f(&rec, 3)?,
                median: f(&rec, 4)?,
                se: f(&rec, 5)?,
                lower: f(&rec, 6)?,
                upper: f(&rec, 7)?,
            })
        } else {
            Err(rec[off + 8].to_string())
        };
        out.push((
            value,
            ReplicationRecord {
                replication: rec[off].parse()?,
                model: rec[off + 1].to_string(),
                outcome,
                seconds: 0.0,
            },
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTiming {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replication: Option<usize>,
    pub model: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ConfigMap,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub failures: usize,
    pub wall_seconds: f64,
    pub fits: Vec<FitTiming>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a manifest", path.display()))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
