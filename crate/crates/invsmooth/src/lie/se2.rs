//! SE(2) kernel with tangent ordering (v1, v2, theta).

use super::{so2, LieError};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

const SMALL_ANGLE: f64 = 1e-8;

/// Coefficients a = sin(t)/t and b = (1 - cos(t))/t of the planar
/// translation mixer V(t).
fn v_coeffs(t: f64) -> (f64, f64) {
    if t.abs() < SMALL_ANGLE {
        (
            1.0 - t * t / 6.0 + t.powi(4) / 120.0,
            t * (0.5 - t * t / 24.0 + t.powi(4) / 720.0),
        )
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t)
    }
}

pub(crate) fn hat_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.0, -xi[2], xi[0], xi[2], 0.0, xi[1], 0.0, 0.0, 0.0],
    )
}

pub(crate) fn exp_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    let theta = xi[2];
    let (a, b) = v_coeffs(theta);
    let v = Matrix2::new(a, -b, b, a);
    let t = v * Vector2::new(xi[0], xi[1]);
    let rot = so2::rot(theta);
    let mut out = DMatrix::identity(3, 3);
    out.view_mut((0, 0), (2, 2)).copy_from(&rot);
    out[(0, 2)] = t.x;
    out[(1, 2)] = t.y;
    out
}

pub(crate) fn log_dyn(mat: &DMatrix<f64>) -> Result<DVector<f64>, LieError> {
    let rot = mat.view((0, 0), (2, 2)).into_owned();
    let theta = so2::log(&rot)?[0];
    let (a, b) = v_coeffs(theta);
    // V^-1 = [[a, b], [-b, a]] / (a^2 + b^2); the denominator only vanishes
    // at theta = 2*pi, outside the principal branch.
    let den = a * a + b * b;
    let vinv = Matrix2::new(a, b, -b, a) / den;
    let t = vinv * Vector2::new(mat[(0, 2)], mat[(1, 2)]);
    Ok(DVector::from_column_slice(&[t.x, t.y, theta]))
}

pub(crate) fn adjoint_dyn(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let (t1, t2) = (mat[(0, 2)], mat[(1, 2)]);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            mat[(0, 0)],
            mat[(0, 1)],
            t2,
            mat[(1, 0)],
            mat[(1, 1)],
            -t1,
            0.0,
            0.0,
            1.0,
        ],
    )
}

pub(crate) fn bracket_dyn(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    // [(v, t), (v', t')] = (t J v' - t' J v, 0) with J the 90 degree rotation.
    let ja = Vector2::new(-a[1], a[0]);
    let jb = Vector2::new(-b[1], b[0]);
    let v = a[2] * jb - b[2] * ja;
    DVector::from_column_slice(&[v.x, v.y, 0.0])
}
