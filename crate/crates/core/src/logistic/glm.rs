use nalgebra::{DMatrix, DVector};

use super::FrequentistFit;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, sandwich, spd_inverse, spd_solve};
use crate::panel::BinaryPanel;
use crate::stats::sigmoid;

const MAX_ITER: usize = 50;
const SCORE_TOL: f64 = 1e-10;
// |η| beyond this means fitted probabilities are numerically 0 or 1.
const SEPARATION_ETA: f64 = 30.0;

/// Covariates with a leading intercept column.
pub(crate) fn design_row(panel: &BinaryPanel, row: usize, out: &mut [f64]) {
    out[0] = 1.0;
    out[1..].copy_from_slice(panel.design().row(row));
}

fn eta(beta: &DVector<f64>, xr: &[f64]) -> f64 {
    xr.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
}

/// Score vector and observed information at `beta`.
fn score_and_information(panel: &BinaryPanel, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, f64) {
    let k = beta.len();
    let mut score = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    let mut xr = vec![0.0; k];
    let mut max_eta: f64 = 0.0;
    for r in 0..panel.design().n_rows() {
        design_row(panel, r, &mut xr);
        let e = eta(beta, &xr);
        max_eta = max_eta.max(e.abs());
        let mu = sigmoid(e);
        let resid = panel.y(r) as u8 as f64 - mu;
        let w = mu * (1.0 - mu);
        for a in 0..k {
            score[a] += resid * xr[a];
            for b in 0..=a {
                info[(a, b)] += w * xr[a] * xr[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (score, info, max_eta)
}

/// Logistic-regression MLE by iteratively reweighted least squares.
///
/// The returned fit carries the naive (model-based) covariance and the
/// subject-clustered sandwich.
pub fn fit_glm_irls(panel: &BinaryPanel) -> Result<FrequentistFit> {
    let k = panel.design().n_covariates() + 1;
    let mut beta = DVector::zeros(k);
    for iter in 1..=MAX_ITER {
        let (score, info, max_eta) = score_and_information(panel, &beta);
        if max_eta > SEPARATION_ETA {
            return Err(Error::Separation(format!(
                "linear predictor reached {max_eta:.1} after {iter} iterations"
            )));
        }
        if max_abs(&score) < SCORE_TOL {
            let naive = spd_inverse(&info, "GLM information")?;
            let mut fit = FrequentistFit::new(names(panel), beta.iter().copied().collect(), naive, true, iter);
            fit.robust_cov = Some(clustered_sandwich(panel, &fit)?);
            return Ok(fit);
        }
        let step = spd_solve(&info, &score, "GLM information")?;
        beta += step;
    }
    Err(Error::NonConvergence {
        model: "GLM",
        iterations: MAX_ITER,
    })
}

fn names(panel: &BinaryPanel) -> Vec<String> {
    std::iter::once("(intercept)".to_string())
        .chain(panel.design().covariate_names().iter().cloned())
        .collect()
}

/// Gradient of the logistic log-likelihood at the fit's coefficients.
pub fn glm_score(panel: &BinaryPanel, coefficients: &[f64]) -> Vec<f64> {
    let beta = DVector::from_column_slice(coefficients);
    score_and_information(panel, &beta).0.iter().copied().collect()
}

/// Independence-working-correlation GEE covariance: `A⁻¹ B A⁻¹` with `B`
/// summing outer products of per-subject score totals.
pub fn clustered_sandwich(panel: &BinaryPanel, fit: &FrequentistFit) -> Result<DMatrix<f64>> {
    let k = fit.coefficients.len();
    let beta = DVector::from_column_slice(&fit.coefficients);
    let (_, info, _) = score_and_information(panel, &beta);
    let bread = spd_inverse(&info, "GEE bread")?;
    let d = panel.design();
    let mut meat = DMatrix::zeros(k, k);
    let mut xr = vec![0.0; k];
    let mut u = DVector::zeros(k);
    for s in 0..d.n_subjects() {
        u.fill(0.0);
        for &r in d.rows_of(s) {
            design_row(panel, r, &mut xr);
            let resid = panel.y(r) as u8 as f64 - sigmoid(eta(&beta, &xr));
            for a in 0..k {
                u[a] += resid * xr[a];
            }
        }
        meat += &u * u.transpose();
    }
    Ok(sandwich(&bread, &meat))
}
