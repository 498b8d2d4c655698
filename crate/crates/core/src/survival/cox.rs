use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sandwich, spd_inverse, spd_solve};
use crate::panel::SurvivalPanel;
use crate::stats::variance;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-10;
// Coefficients this large only arise when the partial likelihood is monotone.
const DIVERGENCE: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub log_partial_likelihood: f64,
    /// Inverse observed information. NaN when the information is singular,
    /// e.g. for a covariate that never varies.
    pub naive_cov: DMatrix<f64>,
    /// Lee–Wei–Amato sandwich over subject-summed score residuals.
    pub robust_cov: DMatrix<f64>,
    pub ties: String,
    pub iterations: usize,
}

impl CoxFit {
    pub fn robust_se(&self, j: usize) -> f64 {
        self.robust_cov[(j, j)].sqrt()
    }
}

/// Rows ordered by time, grouped into blocks of equal times.
struct RiskSets {
    order: Vec<usize>,
    /// `(start, end)` into `order` of each block of tied times, ascending.
    blocks: Vec<(usize, usize)>,
}

impl RiskSets {
    fn new(panel: &SurvivalPanel) -> Self {
        let t = panel.times();
        let mut order: Vec<usize> = (0..t.len()).collect();
        order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
        let mut blocks = Vec::new();
        let mut start = 0;
        for k in 1..=order.len() {
            if k == order.len() || t[order[k]] != t[order[start]] {
                blocks.push((start, k));
                start = k;
            }
        }
        Self { order, blocks }
    }
}

struct PartialLikelihood {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn linear_predictor(panel: &SurvivalPanel, beta: &DVector<f64>) -> Vec<f64> {
    let d = panel.design();
    (0..d.n_rows())
        .map(|r| d.row(r).iter().zip(beta.iter()).map(|(x, b)| x * b).sum())
        .collect()
}

/// Breslow log partial likelihood, score and information.
fn evaluate(panel: &SurvivalPanel, sets: &RiskSets, beta: &DVector<f64>) -> PartialLikelihood {
    let d = panel.design();
    let p = beta.len();
    let eta = linear_predictor(panel, beta);
    // Centre η so the exponentials stay in range; the partial likelihood is
    // invariant to this shift.
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    // Sweep from the latest block backwards so the risk set only grows.
    for &(start, end) in sets.blocks.iter().rev() {
        for &r in &sets.order[start..end] {
            let w = (eta[r] - shift).exp();
            let x = DVector::from_column_slice(d.row(r));
            s0 += w;
            s1 += &x * w;
            s2 += &x * x.transpose() * w;
        }
        let xbar = &s1 / s0;
        for &r in &sets.order[start..end] {
            if !panel.events()[r] {
                continue;
            }
            let x = DVector::from_column_slice(d.row(r));
            loglik += eta[r] - shift - s0.ln();
            score += x - &xbar;
            info += &s2 / s0 - &xbar * xbar.transpose();
        }
    }
    PartialLikelihood { loglik, score, info }
}

/// Per-row Breslow score residuals at `beta`.
fn score_residuals(panel: &SurvivalPanel, sets: &RiskSets, beta: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = panel.design();
    let p = beta.len();
    let eta = linear_predictor(panel, beta);
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    // Risk-set sums at each block, built from the back.
    let mut s0_at = vec![0.0; sets.blocks.len()];
    let mut xbar_at = vec![DVector::zeros(p); sets.blocks.len()];
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    for (k, &(start, end)) in sets.blocks.iter().enumerate().rev() {
        for &r in &sets.order[start..end] {
            s0 += w[r];
            s1 += DVector::from_column_slice(d.row(r)) * w[r];
        }
        s0_at[k] = s0;
        xbar_at[k] = &s1 / s0;
    }
    // Forward pass accumulating Breslow hazard increments.
    let mut residuals = vec![DVector::zeros(p); d.n_rows()];
    let mut cum_hazard = 0.0;
    let mut cum_xbar = DVector::zeros(p);
    for (k, &(start, end)) in sets.blocks.iter().enumerate() {
        let events = sets.order[start..end].iter().filter(|&&r| panel.events()[r]).count() as f64;
        cum_hazard += events / s0_at[k];
        cum_xbar += &xbar_at[k] * (events / s0_at[k]);
        for &r in &sets.order[start..end] {
            let x = DVector::from_column_slice(d.row(r));
            let mut u = -(&x * cum_hazard - &cum_xbar) * w[r];
            if panel.events()[r] {
                u += &x - &xbar_at[k];
            }
            residuals[r] = u;
        }
    }
    residuals
}

/// Gradient of the log partial likelihood at `coefficients`.
pub fn cox_score(panel: &SurvivalPanel, coefficients: &[f64]) -> Vec<f64> {
    let sets = RiskSets::new(panel);
    evaluate(panel, &sets, &DVector::from_column_slice(coefficients)).score.iter().copied().collect()
}

/// Cox proportional-hazards fit by Newton–Raphson with Breslow ties and the
/// Lee–Wei–Amato clustered sandwich.
pub fn fit_cox(panel: &SurvivalPanel) -> Result<CoxFit> {
    let p = panel.design().n_covariates();
    if p == 0 {
        return Err(Error::Data("the Cox model needs at least one covariate".into()));
    }
    if panel.n_events() == 0 {
        return Err(Error::Data("no events in the panel".into()));
    }
    let sets = RiskSets::new(panel);
    let mut beta = DVector::zeros(p);
    let mut current = evaluate(panel, &sets, &beta);
    let mut iterations = 0;
    while max_abs(&current.score) >= SCORE_TOL {
        iterations += 1;
        if iterations > MAX_ITER {
            return Err(Error::NonConvergence {
                model: "Cox",
                iterations: MAX_ITER,
            });
        }
        let step = spd_solve(&current.info, &current.score, "Cox information")?;
        let mut t = 1.0;
        loop {
            let candidate = &beta + &step * t;
            let eval = evaluate(panel, &sets, &candidate);
            if eval.loglik >= current.loglik - 1e-12 * current.loglik.abs().max(1.0) || t < 1e-8 {
                beta = candidate;
                current = eval;
                break;
            }
            t *= 0.5;
        }
        if max_abs(&beta) > DIVERGENCE {
            return Err(Error::Separation(
                "partial likelihood is monotone; coefficients diverge".into(),
            ));
        }
        if max_abs(&(&step * t)) < 1e-14 {
            break;
        }
    }
    let naive = spd_inverse(&current.info, "Cox information").unwrap_or_else(|_| DMatrix::from_element(p, p, f64::NAN));
    // The score can flatten out numerically while a coefficient runs off to
    // infinity; that shows up as a vanishing information for it.
    let d = panel.design();
    for j in 0..p {
        let column: Vec<f64> = (0..d.n_rows()).map(|r| d.row(r)[j]).collect();
        if naive[(j, j)] * variance(&column, 0) > 1e6 {
            return Err(Error::Separation(format!(
                "partial likelihood is monotone in {}",
                d.covariate_names()[j]
            )));
        }
    }
    let residuals = score_residuals(panel, &sets, &beta);
    let mut meat = DMatrix::zeros(p, p);
    for s in 0..d.n_subjects() {
        let mut u = DVector::zeros(p);
        for &r in d.rows_of(s) {
            u += &residuals[r];
        }
        meat += &u * u.transpose();
    }
    Ok(CoxFit {
        names: d.covariate_names().to_vec(),
        coefficients: beta.iter().copied().collect(),
        log_partial_likelihood: current.loglik,
        robust_cov: sandwich(&naive, &meat),
        naive_cov: naive,
        ties: "breslow".into(),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RandomStream;

    fn exponential_panel(seed: u64, n: usize, l: usize, beta: f64, frailty_sd: f64) -> SurvivalPanel {
        let mut s = RandomStream::new(seed);
        let (mut subj, mut x, mut t, mut e) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let b = frailty_sd * s.std_normal();
            for _ in 0..l {
                let xv = s.std_normal();
                subj.push(i);
                x.push(vec![xv]);
                t.push(-s.uniform().ln() / (b + beta * xv).exp());
                e.push(true);
            }
        }
        SurvivalPanel::new(subj, x, t, e).unwrap()
    }

    #[test]
    fn closed_form_single_risk_structure() {
        // PL = e^β/(2e^β + 1) · 1/(1 + e^β), maximised at e^β = 1/√2.
        let panel = SurvivalPanel::new(
            vec![0, 1, 0],
            vec![vec![1.0], vec![0.0], vec![1.0]],
            vec![1.0, 2.0, 3.0],
            vec![true, true, false],
        )
        .unwrap();
        let fit = fit_cox(&panel).unwrap();
        assert!((fit.coefficients[0] + 0.5 * 2f64.ln()).abs() < 1e-12);
        let u = (0.5f64).sqrt();
        let pl = (u / (2.0 * u + 1.0) / (1.0 + u)).ln();
        assert!((fit.log_partial_likelihood - pl).abs() < 1e-12);
    }

    #[test]
    fn constant_covariate_gives_zero() {
        let panel = SurvivalPanel::new(vec![0, 1, 2], vec![vec![2.0]; 3], vec![1.0, 2.0, 0.5], vec![true, false, true]).unwrap();
        let fit = fit_cox(&panel).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
        assert!(cox_score(&panel, &[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn monotone_likelihood_is_flagged() {
        let panel = SurvivalPanel::new(vec![0, 1], vec![vec![1.0], vec![0.0]], vec![1.0, 2.0], vec![true, false]).unwrap();
        assert!(matches!(fit_cox(&panel), Err(Error::Separation(_))));
        let none = SurvivalPanel::new(vec![0, 1], vec![vec![1.0], vec![0.0]], vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(fit_cox(&none).is_err());
    }

    #[test]
    fn score_vanishes_and_invariances_hold() {
        let panel = exponential_panel(4, 200, 5, 1.0, 0.5);
        let fit = fit_cox(&panel).unwrap();
        assert!(cox_score(&panel, &fit.coefficients).iter().all(|g| g.abs() < 1e-8));
        let shifted = fit_cox(&panel.shift_covariate(0, 3.7)).unwrap();
        assert!((fit.coefficients[0] - shifted.coefficients[0]).abs() < 1e-9);
        let rescaled = fit_cox(&panel.rescale_times(4.2).unwrap()).unwrap();
        assert!((fit.coefficients[0] - rescaled.coefficients[0]).abs() < 1e-12);
    }

    #[test]
    fn breslow_ties_match_hand_computation() {
        // Two events tied at t = 1 share the full risk set.
        let panel = SurvivalPanel::new(
            vec![0, 1, 2, 3],
            vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0]],
            vec![1.0, 1.0, 2.0, 3.0],
            vec![true, true, true, false],
        )
        .unwrap();
        let b = 0.3f64;
        let u = b.exp();
        let expected = (b - (2.0 * u + 2.0).ln()) + (0.0 - (2.0 * u + 2.0).ln()) + (b - (u + 1.0).ln());
        let sets = RiskSets::new(&panel);
        let got = evaluate(&panel, &sets, &DVector::from_vec(vec![b])).loglik;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn residuals_sum_to_the_score() {
        let panel = exponential_panel(5, 30, 3, 0.8, 1.0);
        let sets = RiskSets::new(&panel);
        let beta = DVector::from_vec(vec![0.4]);
        let total: f64 = score_residuals(&panel, &sets, &beta).iter().map(|u| u[0]).sum();
        assert!((total - evaluate(&panel, &sets, &beta).score[0]).abs() < 1e-10);
    }

    #[test]
    fn robust_equals_naive_shape_without_clustering() {
        let panel = exponential_panel(6, 2_000, 1, 1.0, 0.0);
        let fit = fit_cox(&panel).unwrap();
        let ratio = fit.robust_se(0) / fit.naive_cov[(0, 0)].sqrt();
        assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
        assert!((fit.coefficients[0] - 1.0).abs() < 4.0 * fit.robust_se(0));
    }
}
