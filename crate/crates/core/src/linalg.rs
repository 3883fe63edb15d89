//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};

/// `I - scale * m`.
pub(crate) fn identity_minus(scale: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m * (-scale);
    for i in 0..n {
        out[(i, i)] += 1.0;
    }
    out
}

pub(crate) fn solve(system: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = system.lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| LabError::Numeric("singular linear system".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric("non-finite solution".into()));
    }
    Ok(x)
}

pub(crate) fn inverse(system: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = system
        .lu()
        .try_inverse()
        .ok_or_else(|| LabError::Numeric("singular linear system".into()))?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric("non-finite inverse".into()));
    }
    Ok(inv)
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
