//! Long-format repeated-measures panels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subject index and covariates shared by both outcome families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    n_subjects: usize,
    subject: Vec<usize>,
    /// Row-major, `n_rows × n_covariates`.
    x: Vec<f64>,
    n_covariates: usize,
    names: Vec<String>,
    rows_by_subject: Vec<Vec<usize>>,
}

impl Design {
    pub fn new(subject: Vec<usize>, covariates: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if subject.len() != covariates.len() {
            return Err(Error::Data(format!(
                "{} subject indices but {} covariate rows",
                subject.len(),
                covariates.len()
            )));
        }
        if subject.is_empty() {
            return Err(Error::Data("panel has no rows".into()));
        }
        let n_covariates = names.len();
        let n_subjects = subject.iter().max().map_or(0, |m| m + 1);
        let mut rows_by_subject = vec![Vec::new(); n_subjects];
        let mut x = Vec::with_capacity(subject.len() * n_covariates);
        for (row, (&s, cov)) in subject.iter().zip(&covariates).enumerate() {
            if cov.len() != n_covariates {
                return Err(Error::Data(format!(
                    "row {row} has {} covariates, expected {n_covariates}",
                    cov.len()
                )));
            }
            if let Some(bad) = cov.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {row} has non-finite covariate {bad}")));
            }
            rows_by_subject[s].push(row);
            x.extend_from_slice(cov);
        }
        if let Some(empty) = rows_by_subject.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("subject {empty} has no rows")));
        }
        Ok(Self {
            n_subjects,
            subject,
            x,
            n_covariates,
            names,
            rows_by_subject,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_rows(&self) -> usize {
        self.subject.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn subject(&self, row: usize) -> usize {
        self.subject[row]
    }

    pub fn subjects(&self) -> &[usize] {
        &self.subject
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.x[row * self.n_covariates..(row + 1) * self.n_covariates]
    }

    pub fn rows_of(&self, subject: usize) -> &[usize] {
        &self.rows_by_subject[subject]
    }

    /// Number of measurements per subject.
    pub fn measurements(&self) -> Vec<usize> {
        self.rows_by_subject.iter().map(Vec::len).collect()
    }

    /// Copy with each row repeated `times` times under the same subject.
    fn replicate_rows(&self, times: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut subject = Vec::new();
        let mut cov = Vec::new();
        for r in 0..self.n_rows() {
            for _ in 0..times {
                subject.push(self.subject[r]);
                cov.push(self.row(r).to_vec());
            }
        }
        (subject, cov)
    }
}

fn default_names(p: usize) -> Vec<String> {
    if p == 1 {
        vec!["x".to_string()]
    } else {
        (1..=p).map(|k| format!("x{k}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryPanel {
    design: Design,
    y: Vec<bool>,
}

impl BinaryPanel {
    pub fn new(subject: Vec<usize>, covariates: Vec<Vec<f64>>, y: Vec<bool>) -> Result<Self> {
        let p = covariates.first().map_or(0, Vec::len);
        Self::with_names(subject, covariates, y, default_names(p))
    }

    pub fn with_names(subject: Vec<usize>, covariates: Vec<Vec<f64>>, y: Vec<bool>, names: Vec<String>) -> Result<Self> {
        if y.len() != subject.len() {
            return Err(Error::Data(format!("{} outcomes for {} rows", y.len(), subject.len())));
        }
        Ok(Self {
            design: Design::new(subject, covariates, names)?,
            y,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.y
    }

    pub fn y(&self, row: usize) -> bool {
        self.y[row]
    }

    /// Every row duplicated `times` times within its subject.
    pub fn replicate_rows(&self, times: usize) -> Self {
        let (subject, cov) = self.design.replicate_rows(times);
        let y = self.y.iter().flat_map(|&v| std::iter::repeat_n(v, times)).collect();
        Self::with_names(subject, cov, y, self.design.names.clone()).expect("replicated panel is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPanel {
    design: Design,
    time: Vec<f64>,
    event: Vec<bool>,
}

impl SurvivalPanel {
    pub fn new(subject: Vec<usize>, covariates: Vec<Vec<f64>>, time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let p = covariates.first().map_or(0, Vec::len);
        Self::with_names(subject, covariates, time, event, default_names(p))
    }

    pub fn with_names(
        subject: Vec<usize>,
        covariates: Vec<Vec<f64>>,
        time: Vec<f64>,
        event: Vec<bool>,
        names: Vec<String>,
    ) -> Result<Self> {
        if time.len() != subject.len() || event.len() != subject.len() {
            return Err(Error::Data("time, event and subject columns differ in length".into()));
        }
        if let Some(row) = time.iter().position(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Data(format!("row {row} has non-positive time {}", time[row])));
        }
        Ok(Self {
            design: Design::new(subject, covariates, names)?,
            time,
            event,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn times(&self) -> &[f64] {
        &self.time
    }

    pub fn events(&self) -> &[bool] {
        &self.event
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Same panel with every time multiplied by `c`.
    pub fn rescale_times(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.time.iter_mut().for_each(|t| *t *= c);
        if out.time.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Data(format!("rescaling by {c} produced invalid times")));
        }
        Ok(out)
    }

    /// Same panel with `shift` added to covariate column `k`.
    pub fn shift_covariate(&self, k: usize, shift: f64) -> Self {
        let mut out = self.clone();
        let p = out.design.n_covariates;
        for r in 0..out.design.n_rows() {
            out.design.x[r * p + k] += shift;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_group_by_subject() {
        let p = BinaryPanel::new(vec![1, 0, 1], vec![vec![0.1], vec![0.2], vec![0.3]], vec![true, false, true]).unwrap();
        assert_eq!(p.design().n_subjects(), 2);
        assert_eq!(p.design().rows_of(1), &[0, 2]);
        assert_eq!(p.design().measurements(), vec![1, 2]);
        assert_eq!(p.design().row(2), &[0.3]);
    }

    #[test]
    fn rejects_bad_panels() {
        assert!(BinaryPanel::new(vec![0, 2], vec![vec![0.0], vec![0.0]], vec![true, true]).is_err());
        assert!(BinaryPanel::new(vec![0], vec![vec![0.0]], vec![true, false]).is_err());
        assert!(BinaryPanel::new(vec![0, 0], vec![vec![0.0], vec![0.0, 1.0]], vec![true, true]).is_err());
        assert!(SurvivalPanel::new(vec![0], vec![vec![1.0]], vec![0.0], vec![true]).is_err());
        assert!(SurvivalPanel::new(vec![0], vec![vec![f64::NAN]], vec![1.0], vec![true]).is_err());
    }

    #[test]
    fn replication_keeps_subjects() {
        let p = BinaryPanel::new(vec![0, 1], vec![vec![0.1], vec![0.2]], vec![true, false]).unwrap();
        let d = p.replicate_rows(2);
        assert_eq!(d.design().n_rows(), 4);
        assert_eq!(d.design().subjects(), &[0, 0, 1, 1]);
        assert_eq!(d.outcomes(), &[true, true, false, false]);
    }
}
