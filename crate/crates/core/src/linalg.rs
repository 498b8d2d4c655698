//! Small dense helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular(what))?;
    Ok(chol.inverse())
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular(what))?;
    Ok(chol.solve(rhs))
}

/// `a⁻¹ · b · a⁻¹` for symmetric `a_inv`, symmetrised against rounding.
pub fn sandwich(a_inv: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    let s = a_inv * meat * a_inv;
    (&s + s.transpose()) * 0.5
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

