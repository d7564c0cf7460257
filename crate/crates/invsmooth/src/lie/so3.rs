//! SO(3) kernel: Rodrigues exponential, stable logarithm, left Jacobian.

use super::{LieError, CUT_LOCUS_GUARD};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::f64::consts::PI;

/// Below this angle the trigonometric coefficients switch to their
/// 4th-order Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

pub(crate) fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub(crate) fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// sin(t)/t.
fn coeff_a(t: f64) -> f64 {
    if t.abs() < SMALL_ANGLE {
        1.0 - t * t / 6.0 + t.powi(4) / 120.0
    } else {
        t.sin() / t
    }
}

/// (1 - cos(t))/t^2.
fn coeff_b(t: f64) -> f64 {
    if t.abs() < SMALL_ANGLE {
        0.5 - t * t / 24.0 + t.powi(4) / 720.0
    } else {
        (1.0 - t.cos()) / (t * t)
    }
}

/// (t - sin(t))/t^3.
fn coeff_c(t: f64) -> f64 {
    if t.abs() < SMALL_ANGLE {
        1.0 / 6.0 - t * t / 120.0 + t.powi(4) / 5040.0
    } else {
        (t - t.sin()) / (t * t * t)
    }
}

pub(crate) fn exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = hat(phi);
    Matrix3::identity() + coeff_a(t) * k + coeff_b(t) * (k * k)
}

pub(crate) fn log(r: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let w = vee(&(r - r.transpose())) * 0.5; // sin(t) * axis
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let t = s.atan2(c);
    if PI - t < CUT_LOCUS_GUARD {
        return Err(LieError::AngleAtCut { angle: t });
    }
    if t < SMALL_ANGLE {
        // t/sin(t) expansion applied to w.
        return Ok(w * (1.0 + t * t / 6.0 + 7.0 * t.powi(4) / 360.0));
    }
    if t > PI - 1e-3 {
        // Near pi the antisymmetric part loses precision; recover the axis
        // from the symmetric part and use w only for the signs.
        let aat = (r + Matrix3::identity() * (-c)) / (1.0 - c);
        let sym = (aat + aat.transpose()) * 0.5;
        let k = (0..3)
            .max_by(|&i, &j| sym[(i, i)].partial_cmp(&sym[(j, j)]).unwrap())
            .unwrap();
        let ak = sym[(k, k)].max(0.0).sqrt();
        let mut a = Vector3::zeros();
        for j in 0..3 {
            a[j] = if j == k { ak } else { sym[(j, k)] / ak };
        }
        a /= a.norm();
        if a.dot(&w) < 0.0 {
            a = -a;
        }
        return Ok(a * t);
    }
    Ok(w * (t / s))
}

/// Left Jacobian of SO(3).
pub(crate) fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = hat(phi);
    Matrix3::identity() + coeff_b(t) * k + coeff_c(t) * (k * k)
}

/// Inverse of the left Jacobian (closed form, regular for t < 2*pi).
pub(crate) fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let t = phi.norm();
    let k = hat(phi);
    let c = if t.abs() < 1e-4 {
        1.0 / 12.0 + t * t / 720.0 + t.powi(4) / 30240.0
    } else {
        1.0 / (t * t) - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    Matrix3::identity() - 0.5 * k + c * (k * k)
}

pub(crate) fn hat_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    let v = Vector3::new(xi[0], xi[1], xi[2]);
    DMatrix::from_fn(3, 3, |i, j| hat(&v)[(i, j)])
}

pub(crate) fn exp_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    let r = exp(&Vector3::new(xi[0], xi[1], xi[2]));
    DMatrix::from_fn(3, 3, |i, j| r[(i, j)])
}

pub(crate) fn log_dyn(mat: &DMatrix<f64>) -> Result<DVector<f64>, LieError> {
    let r = Matrix3::from_fn(|i, j| mat[(i, j)]);
    let phi = log(&r)?;
    Ok(DVector::from_column_slice(phi.as_slice()))
}

pub(crate) fn bracket_dyn(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let av = Vector3::new(a[0], a[1], a[2]);
    let bv = Vector3::new(b[0], b[1], b[2]);
    let c = av.cross(&bv);
    DVector::from_column_slice(c.as_slice())
}
