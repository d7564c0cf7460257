//! SE_2(3) kernel (extended poses) with tangent ordering
//! (attitude, velocity, position).

use super::{so3, LieError};
use nalgebra::{DMatrix, DVector, Vector3};

fn parts(xi: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(xi[0], xi[1], xi[2]),
        Vector3::new(xi[3], xi[4], xi[5]),
        Vector3::new(xi[6], xi[7], xi[8]),
    )
}

pub(crate) fn hat_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    let (phi, nu, rho) = parts(xi);
    let k = so3::hat(&phi);
    let mut out = DMatrix::zeros(5, 5);
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = k[(i, j)];
        }
        out[(i, 3)] = nu[i];
        out[(i, 4)] = rho[i];
    }
    out
}

pub(crate) fn exp_dyn(xi: &DVector<f64>) -> DMatrix<f64> {
    let (phi, nu, rho) = parts(xi);
    let r = so3::exp(&phi);
    let jl = so3::left_jacobian(&phi);
    let v = jl * nu;
    let p = jl * rho;
    let mut out = DMatrix::identity(5, 5);
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = r[(i, j)];
        }
        out[(i, 3)] = v[i];
        out[(i, 4)] = p[i];
    }
    out
}

pub(crate) fn log_dyn(mat: &DMatrix<f64>) -> Result<DVector<f64>, LieError> {
    let r = nalgebra::Matrix3::from_fn(|i, j| mat[(i, j)]);
    let phi = so3::log(&r)?;
    let jli = so3::left_jacobian_inv(&phi);
    let v = Vector3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)]);
    let p = Vector3::new(mat[(0, 4)], mat[(1, 4)], mat[(2, 4)]);
    let nu = jli * v;
    let rho = jli * p;
    let mut out = DVector::zeros(9);
    for i in 0..3 {
        out[i] = phi[i];
        out[3 + i] = nu[i];
        out[6 + i] = rho[i];
    }
    Ok(out)
}

/// Block form [[R, 0, 0], [hat(v) R, R, 0], [hat(p) R, 0, R]].
pub(crate) fn adjoint_dyn(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let r = nalgebra::Matrix3::from_fn(|i, j| mat[(i, j)]);
    let v = Vector3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)]);
    let p = Vector3::new(mat[(0, 4)], mat[(1, 4)], mat[(2, 4)]);
    let vr = so3::hat(&v) * r;
    let pr = so3::hat(&p) * r;
    let mut out = DMatrix::zeros(9, 9);
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = r[(i, j)];
            out[(3 + i, j)] = vr[(i, j)];
            out[(3 + i, 3 + j)] = r[(i, j)];
            out[(6 + i, j)] = pr[(i, j)];
            out[(6 + i, 6 + j)] = r[(i, j)];
        }
    }
    out
}

pub(crate) fn bracket_dyn(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (pa, na, ra) = parts(a);
    let (pb, nb, rb) = parts(b);
    let phi = pa.cross(&pb);
    let nu = pa.cross(&nb) - pb.cross(&na);
    let rho = pa.cross(&rb) - pb.cross(&ra);
    let mut out = DVector::zeros(9);
    for i in 0..3 {
        out[i] = phi[i];
        out[3 + i] = nu[i];
        out[6 + i] = rho[i];
    }
    out
}
