use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sandwich, spd_inverse};
use crate::logistic::FrequentistFit;
use crate::panel::SurvivalPanel;
use crate::stats::{mean, variance};

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-9;

/// Weibull accelerated-failure-time fit, `ln T = μ + γᵀx + σW` with `W`
/// standard minimum-extreme-value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullAftFit {
    /// Parameters `(μ, γ..., ln σ)`; `robust_cov` is the subject-clustered
    /// sandwich.
    pub fit: FrequentistFit,
    pub scale: f64,
    /// Proportional-hazards coefficients `−(μ, γ)/σ`, i.e. `ln θ` intercept
    /// followed by log relative risks.
    pub ph_coefficients: Vec<f64>,
    /// Delta-method covariance of `ph_coefficients` from the robust sandwich.
    pub ph_robust_cov: DMatrix<f64>,
}

impl WeibullAftFit {
    /// Weibull shape `τ = 1/σ`.
    pub fn shape(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn ph_robust_se(&self, j: usize) -> f64 {
        self.ph_robust_cov[(j, j)].sqrt()
    }
}

struct Prepared {
    x: Vec<Vec<f64>>,
    log_t: Vec<f64>,
    event: Vec<bool>,
}

fn prepare(panel: &SurvivalPanel) -> Prepared {
    let d = panel.design();
    Prepared {
        x: (0..d.n_rows())
            .map(|r| std::iter::once(1.0).chain(d.row(r).iter().copied()).collect())
            .collect(),
        log_t: panel.times().iter().map(|t| t.ln()).collect(),
        event: panel.events().to_vec(),
    }
}

/// Per-row log-likelihood, gradient and Hessian in `(coefs, ln σ)`.
fn row_terms(data: &Prepared, r: usize, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let k = theta.len() - 1;
    let xr = &data.x[r];
    let log_sigma = theta[k];
    let sigma = log_sigma.exp();
    let z: f64 = xr.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
    let w = (data.log_t[r] - z) / sigma;
    let ew = w.exp();
    let delta = data.event[r] as u8 as f64;
    let ll = delta * (w - log_sigma - data.log_t[r]) - ew;
    let dz = (ew - delta) / sigma;
    let ds = w * (ew - delta) - delta;
    let dzz = -ew / (sigma * sigma);
    let dzs = -(ew * w + ew - delta) / sigma;
    let dss = -w * (ew - delta) - w * w * ew;
    let mut g = DVector::zeros(k + 1);
    let mut h = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        g[a] = dz * xr[a];
        for b in 0..k {
            h[(a, b)] = dzz * xr[a] * xr[b];
        }
        h[(a, k)] = dzs * xr[a];
        h[(k, a)] = dzs * xr[a];
    }
    g[k] = ds;
    h[(k, k)] = dss;
    (ll, g, h)
}

fn total(data: &Prepared, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let dim = theta.len();
    let mut ll = 0.0;
    let mut g = DVector::zeros(dim);
    let mut h = DMatrix::zeros(dim, dim);
    for r in 0..data.log_t.len() {
        let (l, gr, hr) = row_terms(data, r, theta);
        ll += l;
        g += gr;
        h += hr;
    }
    (ll, g, h)
}

/// Weibull AFT maximum likelihood by Newton's method, with a subject-clustered
/// sandwich and conversion to the proportional-hazards scale.
pub fn fit_weibull_aft(panel: &SurvivalPanel) -> Result<WeibullAftFit> {
    if panel.n_events() == 0 {
        return Err(Error::Data("no events in the panel".into()));
    }
    let data = prepare(panel);
    let k = panel.design().n_covariates() + 1;
    let mut theta = DVector::zeros(k + 1);
    theta[0] = mean(&data.log_t);
    // Gumbel SD is σπ/√6.
    theta[k] = (variance(&data.log_t, 0).sqrt() * 6f64.sqrt() / std::f64::consts::PI).max(1e-3).ln();
    let (mut ll, mut g, mut h) = total(&data, &theta);
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=MAX_ITER {
        iterations = iter;
        if max_abs(&g) < GRAD_TOL {
            converged = true;
            break;
        }
        let neg_h = -&h;
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => &g * (1e-3 / max_abs(&g).max(1.0)),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let candidate = &theta + &step * t;
            let (l2, g2, h2) = total(&data, &candidate);
            if l2.is_finite() && l2 >= ll - 1e-12 * ll.abs().max(1.0) {
                theta = candidate;
                ll = l2;
                g = g2;
                h = h2;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    converged |= max_abs(&g) < GRAD_TOL;
    let neg_h = -&h;
    let naive = spd_inverse(&neg_h, "AFT information")?;
    let d = panel.design();
    let mut meat = DMatrix::zeros(k + 1, k + 1);
    for s in 0..d.n_subjects() {
        let mut u = DVector::zeros(k + 1);
        for &r in d.rows_of(s) {
            u += row_terms(&data, r, &theta).1;
        }
        meat += &u * u.transpose();
    }
    let robust = sandwich(&naive, &meat);
    let scale = theta[k].exp();
    let ph_coefficients: Vec<f64> = (0..k).map(|j| -theta[j] / scale).collect();
    // d(−c_j e^{−s}) = −e^{−s} dc_j + c_j e^{−s} ds
    let mut jac = DMatrix::zeros(k, k + 1);
    for j in 0..k {
        jac[(j, j)] = -1.0 / scale;
        jac[(j, k)] = theta[j] / scale;
    }
    let ph_robust_cov = &jac * &robust * jac.transpose();
    let mut names: Vec<String> = std::iter::once("(intercept)".to_string())
        .chain(d.covariate_names().iter().cloned())
        .collect();
    names.push("log(scale)".into());
    let mut fit = FrequentistFit::new(names, theta.iter().copied().collect(), naive, converged, iterations);
    fit.robust_cov = Some(robust);
    Ok(WeibullAftFit {
        fit,
        scale,
        ph_coefficients,
        ph_robust_cov: (&ph_robust_cov + ph_robust_cov.transpose()) * 0.5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RandomStream;

    fn weibull_panel(seed: u64, n: usize, tau: f64, log_rate: f64, beta: f64) -> SurvivalPanel {
        let mut s = RandomStream::new(seed);
        let (mut subj, mut x, mut t, mut e) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let xv = s.std_normal();
            subj.push(i / 3);
            x.push(vec![xv]);
            // S(t) = exp(−θ t^τ)
            let theta = (log_rate + beta * xv).exp();
            let time = (-s.uniform().ln() / theta).powf(1.0 / tau);
            // administrative censoring at 2
            t.push(time.min(2.0));
            e.push(time < 2.0);
        }
        SurvivalPanel::new(subj, x, t, e).unwrap()
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let panel = weibull_panel(1, 60, 1.4, -0.2, 0.7);
        let data = prepare(&panel);
        let theta = DVector::from_vec(vec![0.3, -0.4, -0.1]);
        let (_, g, h) = total(&data, &theta);
        let eps = 1e-6;
        for j in 0..3 {
            let mut up = theta.clone();
            up[j] += eps;
            let mut dn = theta.clone();
            dn[j] -= eps;
            let (lu, gu, _) = total(&data, &up);
            let (ld, gd, _) = total(&data, &dn);
            assert!(((lu - ld) / (2.0 * eps) - g[j]).abs() < 1e-5);
            for i in 0..3 {
                assert!(((gu[i] - gd[i]) / (2.0 * eps) - h[(i, j)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn recovers_weibull_truth_on_ph_scale() {
        let panel = weibull_panel(2, 20_000, 1.5, -0.3, 0.8);
        let fit = fit_weibull_aft(&panel).unwrap();
        assert!(fit.fit.converged);
        assert!((fit.shape() - 1.5).abs() < 0.05, "shape {}", fit.shape());
        assert!((fit.ph_coefficients[1] - 0.8).abs() < 4.0 * fit.ph_robust_se(1));
        assert!((fit.ph_coefficients[0] + 0.3).abs() < 4.0 * fit.ph_robust_se(0));
    }

    #[test]
    fn time_rescaling_shifts_only_the_intercept() {
        let panel = weibull_panel(3, 500, 0.9, 0.1, -0.5);
        let a = fit_weibull_aft(&panel).unwrap();
        let b = fit_weibull_aft(&panel.rescale_times(3.0).unwrap()).unwrap();
        assert!((b.fit.coefficients[0] - a.fit.coefficients[0] - 3f64.ln()).abs() < 1e-7);
        assert!((b.fit.coefficients[1] - a.fit.coefficients[1]).abs() < 1e-7);
        assert!((b.scale - a.scale).abs() < 1e-7);
    }
}
