//! Retraction strategies: how a tangent update is applied to a state
//! estimate, and the matching propagation Jacobian.
//!
//! Each variant sits behind the [`Retraction`] trait and is registered by
//! name, so the CLI and config files select one at runtime. The invariant
//! strategy uses the group exponential; the two others are the
//! component-wise linear updates common in inertial smoothing, which agree
//! with the exponential to first order only.

use crate::dynamics::GroupAffineStep;
use crate::lie::{adjoint, exp, GroupElement, GroupId, TangentVector};
use nalgebra::DMatrix;
use std::fmt;
use std::str::FromStr;

pub trait Retraction: Sync {
    /// Registry key.
    fn name(&self) -> &'static str;

    /// Applies a tangent update to a state estimate.
    fn apply(&self, x: &GroupElement, xi: &TangentVector) -> GroupElement;

    /// Matrix `F` of the linearised propagation residual
    /// `a_i - F xi_i + xi_{i+1}` under this parameterisation.
    fn step_jacobian(
        &self,
        s: &GroupAffineStep,
        est_i: &GroupElement,
        est_next: &GroupElement,
    ) -> DMatrix<f64>;

    /// Tangent reparameterisation `T` with
    /// `apply(x, d) = x * exp(T d) + O(|d|^2)`. Identity unless the strategy
    /// parameterises some slot in a different frame.
    fn tangent_map(&self, x: &GroupElement) -> DMatrix<f64> {
        let q = x.group().tangent_dim();
        DMatrix::identity(q, q)
    }
}

/// Estimate-dependent transition element `Phi(x_i)^-1 Gamma^-1 x_{i+1}`,
/// i.e. the input that would exactly explain the current estimates.
fn estimated_upsilon(
    s: &GroupAffineStep,
    est_i: &GroupElement,
    est_next: &GroupElement,
) -> GroupElement {
    s.phi()
        .apply(est_i)
        .expect("step automorphism validated at construction")
        .inverse()
        .compose(&s.gamma().inverse())
        .compose(est_next)
}

fn estimated_jacobian(
    s: &GroupAffineStep,
    est_i: &GroupElement,
    est_next: &GroupElement,
) -> DMatrix<f64> {
    let m = s
        .phi()
        .matrix(s.group())
        .expect("step automorphism validated at construction");
    adjoint(&estimated_upsilon(s, est_i, est_next).inverse()) * m
}

/// Exponential (invariant) retraction: `x <- x * exp(xi)`. Its Jacobian is
/// the exact log-linear matrix and does not depend on the estimates.
pub struct InvariantRetraction;

impl Retraction for InvariantRetraction {
    fn name(&self) -> &'static str {
        "invariant"
    }

    fn apply(&self, x: &GroupElement, xi: &TangentVector) -> GroupElement {
        x.compose(&exp(xi))
    }

    fn step_jacobian(
        &self,
        s: &GroupAffineStep,
        _est_i: &GroupElement,
        _est_next: &GroupElement,
    ) -> DMatrix<f64> {
        s.log_linear_matrix()
    }
}

/// Component-wise update with the velocity increment in the body frame:
/// `(R d_R, v + R d_v, x + R d_x)`. First-order approximation of the
/// exponential.
pub struct GtsamLinearRetraction;

impl Retraction for GtsamLinearRetraction {
    fn name(&self) -> &'static str {
        "gtsam"
    }

    fn apply(&self, x: &GroupElement, xi: &TangentVector) -> GroupElement {
        linear_update(x, xi, true)
    }

    fn step_jacobian(
        &self,
        s: &GroupAffineStep,
        est_i: &GroupElement,
        est_next: &GroupElement,
    ) -> DMatrix<f64> {
        estimated_jacobian(s, est_i, est_next)
    }
}

/// Component-wise update with the velocity increment in the world frame:
/// `(R d_R, v + d_v, x + R d_x)`. Identical to [`GtsamLinearRetraction`]
/// outside SE_2(3), where there is no velocity slot.
pub struct ForsterSplitRetraction;

impl Retraction for ForsterSplitRetraction {
    fn name(&self) -> &'static str {
        "forster"
    }

    fn apply(&self, x: &GroupElement, xi: &TangentVector) -> GroupElement {
        linear_update(x, xi, false)
    }

    fn step_jacobian(
        &self,
        s: &GroupAffineStep,
        est_i: &GroupElement,
        est_next: &GroupElement,
    ) -> DMatrix<f64> {
        // Velocity-slot conjugation of the estimated Jacobian: the residual
        // is rotated into the world-frame velocity parameterisation on both
        // sides so the chain keeps identity diagonal blocks.
        let f = estimated_jacobian(s, est_i, est_next);
        let t_i = self.tangent_map(est_i);
        let t_next_inv = self.tangent_map(est_next).transpose();
        t_next_inv * f * t_i
    }

    fn tangent_map(&self, x: &GroupElement) -> DMatrix<f64> {
        let q = x.group().tangent_dim();
        let mut t = DMatrix::identity(q, q);
        if x.group() == GroupId::SE23 {
            let rot_t = x.rotation().transpose();
            t.view_mut((3, 3), (3, 3)).copy_from(&rot_t);
        }
        t
    }
}

/// Shared component-wise update. `body_frame_velocity` selects between the
/// two velocity parameterisations; the planar groups have no velocity slot
/// and degenerate to `(R exp(theta), x + R d_x)`.
fn linear_update(x: &GroupElement, xi: &TangentVector, body_frame_velocity: bool) -> GroupElement {
    let group = x.group();
    let v = xi.vector();
    match group {
        GroupId::SO2 | GroupId::SO3 => x.compose(&exp(xi)),
        GroupId::SE2 => {
            let d_rot = crate::lie::exp(
                &TangentVector::from_slice(GroupId::SO2, &[v[2]]).expect("so2 tangent"),
            );
            let rot = x.rotation() * d_rot.matrix();
            let pos = x.position().expect("SE2 has a position column")
                + x.rotation() * nalgebra::DVector::from_column_slice(&[v[0], v[1]]);
            let mut mat = DMatrix::identity(3, 3);
            mat.view_mut((0, 0), (2, 2)).copy_from(&rot);
            mat[(0, 2)] = pos[0];
            mat[(1, 2)] = pos[1];
            GroupElement::from_kernel(GroupId::SE2, mat)
        }
        GroupId::SE23 => {
            let d_rot = crate::lie::exp(
                &TangentVector::from_slice(GroupId::SO3, &[v[0], v[1], v[2]]).expect("so3 tangent"),
            );
            let rot_hat = x.rotation();
            let rot = &rot_hat * d_rot.matrix();
            let dv = nalgebra::DVector::from_column_slice(&[v[3], v[4], v[5]]);
            let vel = x.velocity().expect("SE23 has a velocity column")
                + if body_frame_velocity { &rot_hat * dv } else { dv };
            let pos = x.position().expect("SE23 has a position column")
                + &rot_hat * nalgebra::DVector::from_column_slice(&[v[6], v[7], v[8]]);
            let mut mat = DMatrix::identity(5, 5);
            mat.view_mut((0, 0), (3, 3)).copy_from(&rot);
            for i in 0..3 {
                mat[(i, 3)] = vel[i];
                mat[(i, 4)] = pos[i];
            }
            GroupElement::from_kernel(GroupId::SE23, mat)
        }
    }
}

static INVARIANT: InvariantRetraction = InvariantRetraction;
static FORSTER: ForsterSplitRetraction = ForsterSplitRetraction;
static GTSAM: GtsamLinearRetraction = GtsamLinearRetraction;

static REGISTRY: [&dyn Retraction; 3] = [&INVARIANT, &FORSTER, &GTSAM];

/// All registered strategies.
pub fn retraction_registry() -> &'static [&'static dyn Retraction] {
    &REGISTRY
}

/// Looks a strategy up by its registry key.
pub fn retraction_by_name(name: &str) -> Option<&'static dyn Retraction> {
    REGISTRY.iter().copied().find(|r| r.name() == name)
}

/// Enumerated strategy selector, convertible to the trait object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetractionKind {
    Invariant,
    ForsterSplit,
    GtsamLinear,
}

impl RetractionKind {
    pub fn strategy(self) -> &'static dyn Retraction {
        match self {
            RetractionKind::Invariant => &INVARIANT,
            RetractionKind::ForsterSplit => &FORSTER,
            RetractionKind::GtsamLinear => &GTSAM,
        }
    }

    pub fn name(self) -> &'static str {
        self.strategy().name()
    }

    pub fn all() -> [RetractionKind; 3] {
        [
            RetractionKind::Invariant,
            RetractionKind::ForsterSplit,
            RetractionKind::GtsamLinear,
        ]
    }
}

impl FromStr for RetractionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "invariant" => Ok(RetractionKind::Invariant),
            "forster" => Ok(RetractionKind::ForsterSplit),
            "gtsam" => Ok(RetractionKind::GtsamLinear),
            other => Err(format!(
                "unknown retraction '{other}' (expected invariant, forster or gtsam)"
            )),
        }
    }
}

impl fmt::Display for RetractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
