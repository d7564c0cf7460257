//! SO(2) kernel. One-dimensional and abelian, so everything is closed form.

use super::{LieError, CUT_LOCUS_GUARD};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

pub(crate) fn rot(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

pub(crate) fn hat(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -theta, theta, 0.0])
}

pub(crate) fn exp(theta: f64) -> DMatrix<f64> {
    rot(theta)
}

pub(crate) fn angle(mat: &DMatrix<f64>) -> f64 {
    mat[(1, 0)].atan2(mat[(0, 0)])
}

pub(crate) fn log(mat: &DMatrix<f64>) -> Result<DVector<f64>, LieError> {
    let theta = angle(mat);
    if PI - theta.abs() < CUT_LOCUS_GUARD {
        return Err(LieError::AngleAtCut { angle: theta.abs() });
    }
    Ok(DVector::from_column_slice(&[theta]))
}
