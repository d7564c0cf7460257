//! Exact matrix Lie group kernel for the groups used by the smoother:
//! SO(2), SE(2), SO(3) and SE_2(3) (extended poses).
//!
//! Elements are stored as homogeneous matrices. Tangent vectors use a fixed
//! component ordering: SE(2) is (v1, v2, theta) so that the heading generator
//! is (0, 0, 1); SE_2(3) is (attitude, velocity, position).
//!
//! The adjoint follows the convention `g * exp(xi) * g^-1 = exp(Ad_g xi)`,
//! which is the one consistent with the log-linear propagation matrix
//! `F = Ad_{Upsilon^-1} * M` used throughout the crate.

mod automorphism;
mod se2;
mod se23;
mod so2;
mod so3;

pub use automorphism::Automorphism;

use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Identifier of a supported matrix Lie group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupId {
    SO2,
    SE2,
    SO3,
    SE23,
}

impl GroupId {
    /// Dimension q of the tangent space.
    pub fn tangent_dim(self) -> usize {
        match self {
            GroupId::SO2 => 1,
            GroupId::SE2 => 3,
            GroupId::SO3 => 3,
            GroupId::SE23 => 9,
        }
    }

    /// Size n of the homogeneous matrix representation.
    pub fn matrix_dim(self) -> usize {
        match self {
            GroupId::SO2 => 2,
            GroupId::SE2 => 3,
            GroupId::SO3 => 3,
            GroupId::SE23 => 5,
        }
    }

    /// Size of the rotation block (top-left).
    pub fn rotation_dim(self) -> usize {
        match self {
            GroupId::SO2 | GroupId::SE2 => 2,
            GroupId::SO3 | GroupId::SE23 => 3,
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GroupId::SO2 => "SO(2)",
            GroupId::SE2 => "SE(2)",
            GroupId::SO3 => "SO(3)",
            GroupId::SE23 => "SE_2(3)",
        };
        f.write_str(s)
    }
}

/// Errors from the group kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum LieError {
    /// The rotation angle is within the cut-locus guard band around pi,
    /// where the logarithm is not unique.
    AngleAtCut { angle: f64 },
    /// The requested automorphism is not defined for this group.
    UnsupportedAutomorphism { group: GroupId, name: &'static str },
    /// A matrix failed the group membership checks.
    InvalidElement(String),
    /// Mixed groups or wrong vector/matrix sizes.
    GroupMismatch { expected: GroupId, actual: GroupId },
    /// Wrong tangent vector length.
    DimensionMismatch { expected: usize, actual: usize },
}

impl fmt::Display for LieError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LieError::AngleAtCut { angle } => {
                write!(f, "rotation angle {angle} is at the logarithm cut locus")
            }
            LieError::UnsupportedAutomorphism { group, name } => {
                write!(f, "automorphism {name} is not supported on {group}")
            }
            LieError::InvalidElement(msg) => write!(f, "invalid group element: {msg}"),
            LieError::GroupMismatch { expected, actual } => {
                write!(f, "group mismatch: expected {expected}, got {actual}")
            }
            LieError::DimensionMismatch { expected, actual } => {
                write!(f, "dimension mismatch: expected {expected}, got {actual}")
            }
        }
    }
}

impl std::error::Error for LieError {}

/// Half-width of the guard band around pi where `log` refuses to answer.
pub const CUT_LOCUS_GUARD: f64 = 1e-7;

/// Tolerance for the orthogonality / determinant membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Element of one of the supported groups, stored as its homogeneous matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    group: GroupId,
    mat: DMatrix<f64>,
}

impl GroupElement {
    /// Identity element.
    pub fn identity(group: GroupId) -> Self {
        GroupElement {
            group,
            mat: DMatrix::identity(group.matrix_dim(), group.matrix_dim()),
        }
    }

    /// Builds an element from a raw matrix, checking group membership:
    /// rotation block orthogonal with determinant +1 (tolerance 1e-9) and
    /// bottom rows exactly `[0 .. 0 | I]`.
    pub fn from_matrix(group: GroupId, mat: DMatrix<f64>) -> Result<Self, LieError> {
        let n = group.matrix_dim();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(LieError::InvalidElement(format!(
                "expected {n}x{n} matrix for {group}, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let r = group.rotation_dim();
        let rot = mat.view((0, 0), (r, r)).into_owned();
        let ortho = (&rot * rot.transpose() - DMatrix::identity(r, r)).norm();
        if ortho > MEMBERSHIP_TOL {
            return Err(LieError::InvalidElement(format!(
                "rotation block is not orthogonal (residual {ortho:.3e})"
            )));
        }
        let det = rot.determinant();
        if (det - 1.0).abs() > MEMBERSHIP_TOL {
            return Err(LieError::InvalidElement(format!(
                "rotation block determinant {det} != +1"
            )));
        }
        for i in r..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                if mat[(i, j)] != want {
                    return Err(LieError::InvalidElement(format!(
                        "fixed bottom row entry ({i},{j}) = {}, expected {want}",
                        mat[(i, j)]
                    )));
                }
            }
        }
        Ok(GroupElement { group, mat })
    }

    /// Internal constructor for matrices produced by the kernel itself.
    pub(crate) fn from_kernel(group: GroupId, mat: DMatrix<f64>) -> Self {
        GroupElement { group, mat }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// Group composition `self * rhs`. Panics on mixed groups.
    pub fn compose(&self, rhs: &GroupElement) -> GroupElement {
        assert_eq!(
            self.group, rhs.group,
            "cannot compose {} with {}",
            self.group, rhs.group
        );
        GroupElement {
            group: self.group,
            mat: &self.mat * &rhs.mat,
        }
    }

    /// Group inverse via the closed form (R^T and rotated columns).
    pub fn inverse(&self) -> GroupElement {
        let n = self.group.matrix_dim();
        let r = self.group.rotation_dim();
        let rot_t = self
            .mat
            .view((0, 0), (r, r))
            .transpose()
            .into_owned();
        let mut out = DMatrix::identity(n, n);
        out.view_mut((0, 0), (r, r)).copy_from(&rot_t);
        for j in r..n {
            let col = self.mat.view((0, j), (r, 1)).into_owned();
            let inv_col = -(&rot_t * col);
            out.view_mut((0, j), (r, 1)).copy_from(&inv_col);
        }
        GroupElement {
            group: self.group,
            mat: out,
        }
    }

    /// Top-left rotation block.
    pub fn rotation(&self) -> DMatrix<f64> {
        let r = self.group.rotation_dim();
        self.mat.view((0, 0), (r, r)).into_owned()
    }

    /// Position column (SE(2): column 2, SE_2(3): column 4).
    pub fn position(&self) -> Option<DVector<f64>> {
        match self.group {
            GroupId::SE2 => Some(DVector::from_column_slice(&[
                self.mat[(0, 2)],
                self.mat[(1, 2)],
            ])),
            GroupId::SE23 => Some(DVector::from_column_slice(&[
                self.mat[(0, 4)],
                self.mat[(1, 4)],
                self.mat[(2, 4)],
            ])),
            _ => None,
        }
    }

    /// Velocity column (SE_2(3) only).
    pub fn velocity(&self) -> Option<DVector<f64>> {
        match self.group {
            GroupId::SE23 => Some(DVector::from_column_slice(&[
                self.mat[(0, 3)],
                self.mat[(1, 3)],
                self.mat[(2, 3)],
            ])),
            _ => None,
        }
    }

    /// Entry-wise maximum absolute difference of the two matrices.
    pub fn distance(&self, other: &GroupElement) -> f64 {
        (&self.mat - &other.mat).amax()
    }
}

/// Tangent vector ("Lie algebra coordinates") of one of the supported groups.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    group: GroupId,
    xi: DVector<f64>,
}

impl TangentVector {
    pub fn new(group: GroupId, xi: DVector<f64>) -> Result<Self, LieError> {
        if xi.len() != group.tangent_dim() {
            return Err(LieError::DimensionMismatch {
                expected: group.tangent_dim(),
                actual: xi.len(),
            });
        }
        Ok(TangentVector { group, xi })
    }

    pub fn from_slice(group: GroupId, xi: &[f64]) -> Result<Self, LieError> {
        Self::new(group, DVector::from_column_slice(xi))
    }

    pub fn zero(group: GroupId) -> Self {
        TangentVector {
            group,
            xi: DVector::zeros(group.tangent_dim()),
        }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.xi
    }

    pub fn norm(&self) -> f64 {
        self.xi.norm()
    }

    /// Norm of the attitude slots (the full vector for SO(2)/SO(3)).
    pub fn attitude_norm(&self) -> f64 {
        match self.group {
            GroupId::SO2 => self.xi[0].abs(),
            GroupId::SE2 => self.xi[2].abs(),
            GroupId::SO3 => self.xi.norm(),
            GroupId::SE23 => self.xi.rows(0, 3).norm(),
        }
    }
}

/// Lie algebra element as a matrix (the "hat" of the coordinates).
pub fn hat(v: &TangentVector) -> DMatrix<f64> {
    match v.group {
        GroupId::SO2 => so2::hat(v.xi[0]),
        GroupId::SE2 => se2::hat_dyn(&v.xi),
        GroupId::SO3 => so3::hat_dyn(&v.xi),
        GroupId::SE23 => se23::hat_dyn(&v.xi),
    }
}

/// Group exponential (closed form per group). Total function.
pub fn exp(v: &TangentVector) -> GroupElement {
    let mat = match v.group {
        GroupId::SO2 => so2::exp(v.xi[0]),
        GroupId::SE2 => se2::exp_dyn(&v.xi),
        GroupId::SO3 => so3::exp_dyn(&v.xi),
        GroupId::SE23 => se23::exp_dyn(&v.xi),
    };
    GroupElement::from_kernel(v.group, mat)
}

/// Group logarithm. Fails with `AngleAtCut` when the rotation angle is
/// within `CUT_LOCUS_GUARD` of pi.
pub fn log(g: &GroupElement) -> Result<TangentVector, LieError> {
    let xi = match g.group {
        GroupId::SO2 => so2::log(&g.mat)?,
        GroupId::SE2 => se2::log_dyn(&g.mat)?,
        GroupId::SO3 => so3::log_dyn(&g.mat)?,
        GroupId::SE23 => se23::log_dyn(&g.mat)?,
    };
    Ok(TangentVector { group: g.group, xi })
}

/// Adjoint matrix of `g`, satisfying `g * exp(v) * g^-1 = exp(Ad_g v)`.
pub fn adjoint(g: &GroupElement) -> DMatrix<f64> {
    match g.group {
        GroupId::SO2 => DMatrix::identity(1, 1),
        GroupId::SE2 => se2::adjoint_dyn(&g.mat),
        GroupId::SO3 => g.rotation(),
        GroupId::SE23 => se23::adjoint_dyn(&g.mat),
    }
}

/// Lie bracket `[a, b]` in coordinates, i.e. `vee(hat(a) hat(b) - hat(b) hat(a))`.
pub fn bracket(a: &TangentVector, b: &TangentVector) -> TangentVector {
    assert_eq!(a.group, b.group, "bracket of mixed groups");
    let xi = match a.group {
        GroupId::SO2 => DVector::zeros(1),
        GroupId::SE2 => se2::bracket_dyn(&a.xi, &b.xi),
        GroupId::SO3 => so3::bracket_dyn(&a.xi, &b.xi),
        GroupId::SE23 => se23::bracket_dyn(&a.xi, &b.xi),
    };
    TangentVector { group: a.group, xi }
}

/// Matrix of `ad_v = [v, .]` in coordinates (columns are brackets with the
/// canonical basis).
pub fn ad_matrix(v: &TangentVector) -> DMatrix<f64> {
    let q = v.group.tangent_dim();
    let mut out = DMatrix::zeros(q, q);
    for j in 0..q {
        let mut e = DVector::zeros(q);
        e[j] = 1.0;
        let col = bracket(
            v,
            &TangentVector {
                group: v.group,
                xi: e,
            },
        );
        out.column_mut(j).copy_from(&col.xi);
    }
    out
}

/// Series `sum_k (-ad_v)^k / (k+1)!`, i.e. the inverse of [`right_jacobian`].
/// Satisfies `exp(v + d) = exp(v) * exp(right_jacobian_inverse(v) * d) + O(|d|^2)`.
pub fn right_jacobian_inverse(v: &TangentVector) -> DMatrix<f64> {
    let q = v.group.tangent_dim();
    let neg_ad = -ad_matrix(v);
    let mut sum = DMatrix::identity(q, q);
    let mut term = DMatrix::identity(q, q);
    for k in 1..=40 {
        term = (&term * &neg_ad) / (k as f64 + 1.0);
        sum += &term;
        if term.amax() < 1e-18 {
            break;
        }
    }
    sum
}

/// Right Jacobian in the BCH sense: the matrix `J` with
/// `log(exp(v) * exp(e*d)) = v + e * J * d + O(e^2)`.
/// Requires the attitude part of `v` to stay below pi.
pub fn right_jacobian(v: &TangentVector) -> DMatrix<f64> {
    let q = v.group.tangent_dim();
    right_jacobian_inverse(v)
        .lu()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(q, q))
}

#[cfg(test)]
mod tests;
