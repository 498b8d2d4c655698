//! Random-intercept logistic GLMM by adaptive Gauss–Hermite quadrature.

use nalgebra::{DMatrix, DVector};

use super::glm::{design_row, fit_glm_irls};
use super::FrequentistFit;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, spd_inverse};
use crate::panel::BinaryPanel;
use crate::quadrature::gauss_hermite;
use crate::stats::{bernoulli_logit_logpmf, log_sum_exp, sigmoid, HALF_LN_2PI};

const MAX_OUTER: usize = 200;
const GRAD_TOL: f64 = 1e-6;
const MODE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GlmmFit {
    /// Fixed effects `(intercept, slopes...)` with the inverse observed
    /// information of the marginal likelihood as `naive_cov`.
    pub fit: FrequentistFit,
    pub random_sd: f64,
    /// Empirical-Bayes (posterior mode) random intercepts.
    pub intercept_modes: Vec<f64>,
    pub log_likelihood: f64,
    pub quad_points: usize,
}

struct Problem<'a> {
    panel: &'a BinaryPanel,
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    k: usize,
}

struct Evaluation {
    loglik: f64,
    /// Gradient over `(β..., σ)`.
    grad: DVector<f64>,
    modes: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(panel: &'a BinaryPanel, quad_points: usize) -> Self {
        let (nodes, weights) = gauss_hermite(quad_points);
        // fold the exp(x²) factor of the change of variables into the weights
        let log_weights = nodes.iter().zip(&weights).map(|(x, w)| w.ln() + x * x).collect();
        Self {
            panel,
            nodes,
            log_weights,
            k: panel.design().n_covariates() + 1,
        }
    }

    fn evaluate(&self, theta: &DVector<f64>, warm: Option<&[f64]>) -> Evaluation {
        let k = self.k;
        let sigma = theta[k];
        let beta = theta.rows(0, k);
        let d = self.panel.design();
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(k + 1);
        let mut modes = Vec::with_capacity(d.n_subjects());
        let mut xr = vec![0.0; k];
        let mut offsets: Vec<(f64, bool, usize)> = Vec::new();
        let mut terms = vec![0.0; self.nodes.len()];
        for s in 0..d.n_subjects() {
            offsets.clear();
            for &r in d.rows_of(s) {
                design_row(self.panel, r, &mut xr);
                let e: f64 = xr.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                offsets.push((e, self.panel.y(r), r));
            }
            let g = |z: f64| -> f64 {
                offsets
                    .iter()
                    .map(|&(e, y, _)| bernoulli_logit_logpmf(y, e + sigma * z))
                    .sum::<f64>()
                    - 0.5 * z * z
            };
            // Newton on the strictly concave log-integrand.
            let mut z = warm.map_or(0.0, |w| w[s]);
            let mut curvature = 1.0;
            for _ in 0..100 {
                let (mut d1, mut d2) = (-z, -1.0);
                for &(e, y, _) in &offsets {
                    let p = sigmoid(e + sigma * z);
                    d1 += sigma * (y as u8 as f64 - p);
                    d2 -= sigma * sigma * p * (1.0 - p);
                }
                curvature = -d2;
                let mut step = d1 / curvature;
                let g0 = g(z);
                while g(z + step) < g0 - 1e-12 && step.abs() > 1e-14 {
                    step *= 0.5;
                }
                z += step;
                if step.abs() < MODE_TOL {
                    break;
                }
            }
            let spread = std::f64::consts::SQRT_2 / curvature.sqrt();
            for (t, (&x, &lw)) in terms.iter_mut().zip(self.nodes.iter().zip(&self.log_weights)) {
                *t = lw + g(z + spread * x);
            }
            let lse = log_sum_exp(&terms);
            loglik += spread.ln() - HALF_LN_2PI + lse;
            for (&t, &x) in terms.iter().zip(&self.nodes) {
                let omega = (t - lse).exp();
                if omega == 0.0 {
                    continue;
                }
                let zk = z + spread * x;
                for &(e, y, r) in &offsets {
                    let resid = y as u8 as f64 - sigmoid(e + sigma * zk);
                    design_row(self.panel, r, &mut xr);
                    for a in 0..k {
                        grad[a] += omega * resid * xr[a];
                    }
                    grad[k] += omega * resid * zk;
                }
            }
            modes.push(z);
        }
        Evaluation { loglik, grad, modes }
    }

    fn hessian(&self, theta: &DVector<f64>, warm: &[f64]) -> DMatrix<f64> {
        let dim = theta.len();
        let mut h = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let step = 1e-5 * theta[j].abs().max(1.0);
            let mut up = theta.clone();
            up[j] += step;
            let mut down = theta.clone();
            down[j] -= step;
            let gu = self.evaluate(&up, Some(warm)).grad;
            let gd = self.evaluate(&down, Some(warm)).grad;
            h.set_column(j, &((gu - gd) / (2.0 * step)));
        }
        (&h + h.transpose()) * 0.5
    }
}

/// Maximise the random-intercept logistic marginal likelihood with
/// `quad_points`-node adaptive Gauss–Hermite quadrature per subject.
pub fn fit_glmm_quadrature(panel: &BinaryPanel, quad_points: usize) -> Result<GlmmFit> {
    if !(5..=150).contains(&quad_points) {
        return Err(Error::Config(format!("quadrature points must lie in 5..=150, got {quad_points}")));
    }
    let start = fit_glm_irls(panel)?;
    let problem = Problem::new(panel, quad_points);
    let k = problem.k;
    let mut theta = DVector::from_iterator(k + 1, start.coefficients.iter().copied().chain([0.5]));
    let mut current = problem.evaluate(&theta, None);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=MAX_OUTER {
        iterations = iter;
        if max_abs(&current.grad) < GRAD_TOL {
            converged = true;
            break;
        }
        let neg_h = -problem.hessian(&theta, &current.modes);
        let direction = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&current.grad),
            None => {
                // Levenberg-style ridge until the system is positive definite.
                let mut lambda = 1e-3 * neg_h.diagonal().abs().max().max(1.0);
                loop {
                    let ridged = &neg_h + DMatrix::identity(k + 1, k + 1) * lambda;
                    if let Some(ch) = ridged.cholesky() {
                        break ch.solve(&current.grad);
                    }
                    lambda *= 10.0;
                }
            }
        };
        let mut t = 1.0;
        let next = loop {
            let candidate = &theta + &direction * t;
            let eval = problem.evaluate(&candidate, Some(&current.modes));
            if eval.loglik >= current.loglik - 1e-10 || t < 1e-10 {
                break Some((candidate, eval));
            }
            t *= 0.5;
        };
        match next {
            Some((cand, eval)) if t >= 1e-10 => {
                theta = cand;
                current = eval;
            }
            _ => break,
        }
    }
    if !converged && max_abs(&current.grad) < GRAD_TOL {
        converged = true;
    }
    let neg_h = -problem.hessian(&theta, &current.modes);
    let cov = spd_inverse(&neg_h, "GLMM information").unwrap_or_else(|_| DMatrix::from_element(k + 1, k + 1, f64::NAN));
    let sigma = theta[k];
    let fixed_cov = cov.view((0, 0), (k, k)).into_owned();
    let fit = FrequentistFit::new(
        start.names.clone(),
        theta.rows(0, k).iter().copied().collect(),
        fixed_cov,
        converged,
        iterations,
    );
    Ok(GlmmFit {
        fit,
        random_sd: sigma.abs(),
        intercept_modes: current.modes.iter().map(|z| sigma * z).collect(),
        log_likelihood: current.loglik,
        quad_points,
    })
}
