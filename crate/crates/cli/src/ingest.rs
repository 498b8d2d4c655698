//! Long-format panel CSVs.
//!
//! Binary files carry `subject_id`, `y` and covariates; survival files carry
//! `subject_id`, `time`, `event` and covariates. A covariate header may end
//! in `:num` (the default) or `:cat`. Categorical columns become indicator
//! columns named `col[level]`, with the first level seen as reference.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dpmreg::{BinaryPanel, SurvivalPanel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Binary,
    Survival,
}

impl Schema {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Schema::Binary),
            "survival" => Ok(Schema::Survival),
            _ => bail!("unknown schema '{s}' (expected binary or survival)"),
        }
    }

    fn outcome_columns(&self) -> &'static [&'static str] {
        match self {
            Schema::Binary => &["y"],
            Schema::Survival => &["time", "event"],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Panel {
    Binary(BinaryPanel),
    Survival(SurvivalPanel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub panel: Panel,
    /// Original subject labels, indexed by panel subject.
    pub subject_ids: Vec<String>,
}

enum Kind {
    Num,
    Cat,
}

struct Column {
    index: usize,
    name: String,
    kind: Kind,
}

pub fn ingest_panel_csv(path: &Path, schema: Schema) -> Result<Ingested> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ingest_panel_reader(file, schema).with_context(|| format!("in {}", path.display()))
}

pub fn ingest_panel_reader(reader: impl std::io::Read, schema: Schema) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().context("line 1: cannot read header")?.clone();
    if header.is_empty() {
        bail!("line 1: empty header");
    }
    let mut fixed: HashMap<&str, usize> = HashMap::new();
    let mut covs = Vec::new();
    for (index, h) in header.iter().enumerate() {
        let h = h.trim();
        if h == "subject_id" || schema.outcome_columns().contains(&h) {
            if fixed.insert(h, index).is_some() {
                bail!("line 1: duplicate column '{h}'");
            }
            continue;
        }
        let (name, kind) = match h.rsplit_once(':') {
            None => (h, Kind::Num),
            Some((n, "num")) => (n, Kind::Num),
            Some((n, "cat")) => (n, Kind::Cat),
            Some((_, t)) => bail!("line 1: column '{h}' has unknown type '{t}' (expected num or cat)"),
        };
        if name.is_empty() {
            bail!("line 1: column {} has no name", index + 1);
        }
        covs.push(Column {
            index,
            name: name.to_string(),
            kind,
        });
    }
    for need in std::iter::once(&"subject_id").chain(schema.outcome_columns()) {
        if !fixed.contains_key(need) {
            bail!("line 1: missing required column '{need}'");
        }
    }

    let mut subject_ids: Vec<String> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut subjects = Vec::new();
    let mut outcome_y = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    // raw covariate strings, one vector per covariate column
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); covs.len()];
    let mut lines = Vec::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("line {line}: {e}")
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| -> Result<&str> {
            let v = rec.get(col).map(str::trim).unwrap_or("");
            if v.is_empty() {
                bail!("line {line}: missing value in column '{name}'");
            }
            Ok(v)
        };
        let sid = field(fixed["subject_id"], "subject_id").map_err(|_| anyhow!("line {line}: empty subject_id"))?;
        let next = subject_ids.len();
        let s = *subject_index.entry(sid.to_string()).or_insert_with(|| {
            subject_ids.push(sid.to_string());
            next
        });
        subjects.push(s);
        match schema {
            Schema::Binary => {
                let y = match field(fixed["y"], "y")? {
                    "0" => false,
                    "1" => true,
                    v => bail!("line {line}: y must be 0 or 1, got '{v}'"),
                };
                outcome_y.push(y);
            }
            Schema::Survival => {
                let t = field(fixed["time"], "time")?;
                let t: f64 = t.parse().map_err(|_| anyhow!("line {line}: time '{t}' is not a number"))?;
                if !(t > 0.0 && t.is_finite()) {
                    bail!("line {line}: time must be positive, got {t}");
                }
                times.push(t);
                let e = match field(fixed["event"], "event")? {
                    "0" => false,
                    "1" => true,
                    v => bail!("line {line}: event must be 0 or 1, got '{v}'"),
                };
                events.push(e);
            }
        }
        for (c, col) in covs.iter().enumerate() {
            raw[c].push(field(col.index, &col.name)?.to_string());
        }
        lines.push(line);
    }
    if subjects.is_empty() {
        bail!("no data rows");
    }

    let n = subjects.len();
    let mut names = Vec::new();
    let mut x: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (col, values) in covs.iter().zip(&raw) {
        match col.kind {
            Kind::Num => {
                for (r, v) in values.iter().enumerate() {
                    let parsed: f64 = v
                        .parse()
                        .ok()
                        .filter(|f: &f64| f.is_finite())
                        .ok_or_else(|| anyhow!("line {}: column '{}' value '{v}' is not a finite number", lines[r], col.name))?;
                    x[r].push(parsed);
                }
                names.push(col.name.clone());
            }
            Kind::Cat => {
                let mut levels: Vec<&str> = Vec::new();
                for v in values {
                    if !levels.contains(&v.as_str()) {
                        levels.push(v);
                    }
                }
                for level in &levels[1..] {
                    names.push(format!("{}[{level}]", col.name));
                }
                for (r, v) in values.iter().enumerate() {
                    x[r].extend(levels[1..].iter().map(|l| if l == v { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    let panel = match schema {
        Schema::Binary => Panel::Binary(BinaryPanel::with_names(subjects, x, outcome_y, names)?),
        Schema::Survival => Panel::Survival(SurvivalPanel::with_names(subjects, x, times, events, names)?),
    };
    Ok(Ingested { panel, subject_ids })
}
