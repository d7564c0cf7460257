//! Group automorphisms and their induced tangent-space matrices M, with
//! `Phi(x * exp(xi)) = Phi(x) * exp(M * xi)`.

use super::{adjoint, GroupElement, GroupId, LieError};
use nalgebra::DMatrix;

/// Supported automorphism family.
#[derive(Debug, Clone)]
pub enum Automorphism {
    Identity,
    /// `x -> g * x * g^-1`, with M = Ad_g.
    Conjugation(GroupElement),
    /// SE_2(3) only: shifts position by dt * velocity, the automorphism of
    /// the inertial navigation transition.
    PositionShift { dt: f64 },
}

impl Automorphism {
    pub fn apply(&self, x: &GroupElement) -> Result<GroupElement, LieError> {
        match self {
            Automorphism::Identity => Ok(x.clone()),
            Automorphism::Conjugation(g) => {
                if g.group() != x.group() {
                    return Err(LieError::GroupMismatch {
                        expected: g.group(),
                        actual: x.group(),
                    });
                }
                Ok(g.compose(x).compose(&g.inverse()))
            }
            Automorphism::PositionShift { dt } => {
                if x.group() != GroupId::SE23 {
                    return Err(LieError::UnsupportedAutomorphism {
                        group: x.group(),
                        name: "PositionShift",
                    });
                }
                let mut mat = x.matrix().clone();
                for i in 0..3 {
                    mat[(i, 4)] += dt * mat[(i, 3)];
                }
                Ok(GroupElement::from_kernel(GroupId::SE23, mat))
            }
        }
    }

    /// Tangent-space matrix M of the automorphism on the given group.
    pub fn matrix(&self, group: GroupId) -> Result<DMatrix<f64>, LieError> {
        let q = group.tangent_dim();
        match self {
            Automorphism::Identity => Ok(DMatrix::identity(q, q)),
            Automorphism::Conjugation(g) => {
                if g.group() != group {
                    return Err(LieError::GroupMismatch {
                        expected: g.group(),
                        actual: group,
                    });
                }
                Ok(adjoint(g))
            }
            Automorphism::PositionShift { dt } => {
                if group != GroupId::SE23 {
                    return Err(LieError::UnsupportedAutomorphism {
                        group,
                        name: "PositionShift",
                    });
                }
                let mut m = DMatrix::identity(9, 9);
                for i in 0..3 {
                    m[(6 + i, 3 + i)] = *dt;
                }
                Ok(m)
            }
        }
    }

    /// Composition `self o earlier` when it stays within the family;
    /// `None` otherwise.
    pub fn compose_after(&self, earlier: &Automorphism) -> Option<Automorphism> {
        match (self, earlier) {
            (Automorphism::Identity, other) | (other, Automorphism::Identity) => {
                Some(other.clone())
            }
            (Automorphism::PositionShift { dt: a }, Automorphism::PositionShift { dt: b }) => {
                Some(Automorphism::PositionShift { dt: a + b })
            }
            (Automorphism::Conjugation(g), Automorphism::Conjugation(h)) => {
                if g.group() != h.group() {
                    return None;
                }
                Some(Automorphism::Conjugation(g.compose(h)))
            }
            _ => None,
        }
    }
}
