use super::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::PI;

const GROUPS: [GroupId; 4] = [GroupId::SO2, GroupId::SE2, GroupId::SO3, GroupId::SE23];

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn random_tangent(g: GroupId, scale: f64, rng: &mut ChaCha12Rng) -> TangentVector {
    let q = g.tangent_dim();
    let xi = DVector::from_fn(q, |_, _| rng.random_range(-scale..scale));
    TangentVector::new(g, xi).unwrap()
}

fn random_element(g: GroupId, scale: f64, rng: &mut ChaCha12Rng) -> GroupElement {
    exp(&random_tangent(g, scale, rng))
}

/// Independent oracle: truncated matrix-power series of the Lie-algebra
/// matrix, 30 terms.
fn exp_series(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=terms {
        term = (&term * m) / (k as f64);
        sum += &term;
    }
    sum
}

#[test]
fn exp_of_zero_is_identity() {
    for g in GROUPS {
        let e = exp(&TangentVector::zero(g));
        assert_eq!(e.matrix(), GroupElement::identity(g).matrix());
    }
}

#[test]
fn se2_exp_pure_rotation_keeps_translation_zero() {
    let v = TangentVector::from_slice(GroupId::SE2, &[0.0, 0.0, PI / 2.0]).unwrap();
    let e = exp(&v);
    assert!(e.matrix()[(0, 0)].abs() < 1e-15);
    assert!((e.matrix()[(1, 0)] - 1.0).abs() < 1e-15);
    assert_eq!(e.matrix()[(0, 2)], 0.0);
    assert_eq!(e.matrix()[(1, 2)], 0.0);
}

#[test]
fn se2_exp_half_turn_translation() {
    // Frozen from the series oracle: exp((1, 0, pi)) has translation (0, 2/pi).
    let v = TangentVector::from_slice(GroupId::SE2, &[1.0, 0.0, PI]).unwrap();
    let e = exp(&v);
    assert!((e.matrix()[(0, 2)] - 0.0).abs() < 1e-12);
    assert!((e.matrix()[(1, 2)] - 2.0 / PI).abs() < 1e-12);
    assert!((e.matrix()[(0, 0)] + 1.0).abs() < 1e-12);
    let oracle = exp_series(&hat(&v), 30);
    assert!((e.matrix() - oracle).amax() < 1e-12);
}

#[test]
fn exp_matches_power_series_oracle() {
    let mut r = rng(1);
    for g in GROUPS {
        for _ in 0..200 {
            let v = random_tangent(g, 1.2, &mut r);
            let oracle = exp_series(&hat(&v), 30);
            assert!(
                (exp(&v).matrix() - &oracle).amax() < 1e-12,
                "exp disagrees with series on {g}"
            );
        }
    }
}

#[test]
fn log_of_identity_is_zero() {
    for g in GROUPS {
        let v = log(&GroupElement::identity(g)).unwrap();
        assert_eq!(v.norm(), 0.0);
    }
}

#[test]
fn log_exp_roundtrip() {
    let mut r = rng(2);
    for g in GROUPS {
        for _ in 0..300 {
            let v = random_tangent(g, 1.1, &mut r);
            let w = log(&exp(&v)).unwrap();
            assert!(
                (v.vector() - w.vector()).amax() < 1e-9,
                "log(exp(v)) != v on {g}"
            );
        }
    }
}

#[test]
fn exp_log_roundtrip_on_elements() {
    let mut r = rng(3);
    for g in GROUPS {
        for _ in 0..300 {
            let x = random_element(g, 1.1, &mut r);
            let back = exp(&log(&x).unwrap());
            assert!(x.distance(&back) < 1e-9, "exp(log(x)) != x on {g}");
        }
    }
}

#[test]
fn se23_pure_velocity_log_is_abelian() {
    let mut mat = DMatrix::identity(5, 5);
    mat[(0, 3)] = 1.0;
    mat[(1, 3)] = 2.0;
    mat[(2, 3)] = 3.0;
    let x = GroupElement::from_matrix(GroupId::SE23, mat).unwrap();
    let v = log(&x).unwrap();
    let expected = [0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0];
    for (a, b) in v.vector().iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn log_near_pi_uses_stable_branch() {
    // Between the cut-locus guard and the branch switch the roundtrip must
    // still hold to 1e-9.
    let mut r = rng(4);
    for _ in 0..100 {
        let axis = random_tangent(GroupId::SO3, 1.0, &mut r);
        let axis = axis.vector() / axis.vector().norm();
        let angle = PI - r.random_range(1e-6..1e-3);
        let v = TangentVector::new(GroupId::SO3, axis * angle).unwrap();
        let w = log(&exp(&v)).unwrap();
        assert!((v.vector() - w.vector()).amax() < 1e-9);
    }
}

#[test]
fn log_at_cut_locus_errors() {
    let v = TangentVector::from_slice(GroupId::SO3, &[PI - 1e-8, 0.0, 0.0]).unwrap();
    match log(&exp(&v)) {
        Err(LieError::AngleAtCut { .. }) => {}
        other => panic!("expected AngleAtCut, got {other:?}"),
    }
    let v = TangentVector::from_slice(GroupId::SE2, &[0.3, -0.2, PI - 1e-8]).unwrap();
    assert!(matches!(
        log(&exp(&v)),
        Err(LieError::AngleAtCut { .. })
    ));
}

#[test]
fn adjoint_of_identity_is_identity() {
    for g in GROUPS {
        let q = g.tangent_dim();
        let ad = adjoint(&GroupElement::identity(g));
        assert_eq!(ad, DMatrix::identity(q, q));
    }
}

#[test]
fn se23_adjoint_position_cross_block() {
    let mut mat = DMatrix::identity(5, 5);
    mat[(0, 4)] = 1.0; // p = (1, 0, 0)
    let x = GroupElement::from_matrix(GroupId::SE23, mat).unwrap();
    let ad = adjoint(&x);
    let cross = so3::hat(&nalgebra::Vector3::new(1.0, 0.0, 0.0));
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(ad[(6 + i, j)], cross[(i, j)]);
            // velocity rows stay uncoupled for v = 0
            assert_eq!(ad[(3 + i, j)], 0.0);
        }
    }
}

#[test]
fn adjoint_matches_direct_conjugation() {
    // Oracle: explicit matrix conjugation g * exp(v) * g^-1.
    let mut r = rng(5);
    for g in GROUPS {
        for _ in 0..200 {
            let x = random_element(g, 0.9, &mut r);
            let v = random_tangent(g, 0.7, &mut r);
            let lhs = x.compose(&exp(&v)).compose(&x.inverse());
            let adv = TangentVector::new(g, adjoint(&x) * v.vector()).unwrap();
            assert!(
                lhs.distance(&exp(&adv)) < 1e-9,
                "conjugation identity fails on {g}"
            );
        }
    }
}

#[test]
fn adjoint_homomorphism() {
    let mut r = rng(6);
    for g in GROUPS {
        for _ in 0..100 {
            let a = random_element(g, 0.9, &mut r);
            let b = random_element(g, 0.9, &mut r);
            let lhs = adjoint(&a.compose(&b));
            let rhs = adjoint(&a) * adjoint(&b);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }
}

#[test]
fn adjoint_of_exp_is_series_of_ad() {
    let mut r = rng(7);
    for g in GROUPS {
        for _ in 0..50 {
            let v = random_tangent(g, 0.8, &mut r);
            let lhs = adjoint(&exp(&v));
            let rhs = exp_series(&ad_matrix(&v), 30);
            assert!((lhs - rhs).amax() < 1e-11);
        }
    }
}

#[test]
fn bracket_is_antisymmetric_and_satisfies_jacobi() {
    let mut r = rng(8);
    for g in GROUPS {
        for _ in 0..50 {
            let a = random_tangent(g, 1.0, &mut r);
            let b = random_tangent(g, 1.0, &mut r);
            let c = random_tangent(g, 1.0, &mut r);
            let ab = bracket(&a, &b);
            let ba = bracket(&b, &a);
            assert!((ab.vector() + ba.vector()).amax() < 1e-12);
            let jacobi = bracket(&a, &bracket(&b, &c)).vector()
                + bracket(&b, &bracket(&c, &a)).vector()
                + bracket(&c, &bracket(&a, &b)).vector();
            assert!(jacobi.amax() < 1e-12);
        }
    }
}

/// Central finite difference of log(exp(v) exp(t*d)) at t = 0.
fn bch_directional_fd(v: &TangentVector, d: &DVector<f64>, eps: f64) -> DVector<f64> {
    let g = v.group();
    let base = exp(v);
    let plus = log(&base.compose(&exp(&TangentVector::new(g, d * eps).unwrap()))).unwrap();
    let minus = log(&base.compose(&exp(&TangentVector::new(g, d * -eps).unwrap()))).unwrap();
    (plus.vector() - minus.vector()) / (2.0 * eps)
}

#[test]
fn right_jacobian_of_zero_is_identity() {
    for g in GROUPS {
        let q = g.tangent_dim();
        let j = right_jacobian(&TangentVector::zero(g));
        assert!((j - DMatrix::identity(q, q)).amax() < 1e-15);
    }
}

#[test]
fn so3_right_jacobian_matches_finite_differences() {
    let v = TangentVector::from_slice(GroupId::SO3, &[PI / 2.0, 0.0, 0.0]).unwrap();
    let j = right_jacobian(&v);
    for k in 0..3 {
        let mut d = DVector::zeros(3);
        d[k] = 1.0;
        let fd = bch_directional_fd(&v, &d, 1e-6);
        assert!((&fd - &j * &d).amax() < 1e-8);
    }
}

#[test]
fn se23_right_jacobian_matches_finite_differences() {
    let mut r = rng(9);
    for _ in 0..20 {
        let v = random_tangent(GroupId::SE23, 0.6, &mut r);
        let j = right_jacobian(&v);
        for _ in 0..3 {
            let d = random_tangent(GroupId::SE23, 1.0, &mut r).into_vector();
            let fd = bch_directional_fd(&v, &d, 1e-6);
            assert!((&fd - &j * &d).amax() < 3e-8);
        }
    }
}

#[test]
fn right_jacobian_error_shrinks_quadratically() {
    // SO(2) is abelian (the map is exactly linear), so only the
    // non-commutative groups have a measurable order.
    let mut r = rng(10);
    for g in [GroupId::SE2, GroupId::SO3, GroupId::SE23] {
        let mut ratios = Vec::new();
        for _ in 0..10 {
            let v = random_tangent(g, 0.8, &mut r);
            let j = right_jacobian(&v);
            let d = random_tangent(g, 1.0, &mut r).into_vector();
            let eps = 1e-3;
            let e1 = (bch_directional_fd(&v, &d, eps) - &j * &d).norm();
            let e2 = (bch_directional_fd(&v, &d, eps / 2.0) - &j * &d).norm();
            if e2 > 1e-13 {
                ratios.push(e1 / e2);
            }
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = ratios[ratios.len() / 2];
        assert!(
            (3.5..=4.5).contains(&median),
            "quadratic shrinkage violated on {g}: median ratio {median}"
        );
    }
}

#[test]
fn right_jacobian_inverse_is_inverse() {
    let mut r = rng(11);
    for g in GROUPS {
        let q = g.tangent_dim();
        for _ in 0..50 {
            let v = random_tangent(g, 0.9, &mut r);
            let prod = right_jacobian(&v) * right_jacobian_inverse(&v);
            assert!((prod - DMatrix::identity(q, q)).amax() < 1e-11);
        }
    }
}

#[test]
fn exp_outputs_satisfy_membership_invariants() {
    let mut r = rng(12);
    for g in GROUPS {
        for _ in 0..1000 {
            let v = random_tangent(g, 1.5, &mut r);
            let e = exp(&v);
            GroupElement::from_matrix(g, e.matrix().clone())
                .unwrap_or_else(|err| panic!("closure violated on {g}: {err}"));
        }
    }
}

#[test]
fn automorphism_identity_matrix_is_identity() {
    for g in GROUPS {
        let q = g.tangent_dim();
        let m = Automorphism::Identity.matrix(g).unwrap();
        assert_eq!(m, DMatrix::identity(q, q));
    }
}

#[test]
fn automorphism_matrix_satisfies_defining_identity() {
    // Oracle: direct verification of Phi(x exp(xi)) = Phi(x) exp(M xi).
    let mut r = rng(13);
    for g in GROUPS {
        for _ in 0..100 {
            let conj = Automorphism::Conjugation(random_element(g, 0.8, &mut r));
            let x = random_element(g, 0.8, &mut r);
            let xi = random_tangent(g, 0.6, &mut r);
            let m = conj.matrix(g).unwrap();
            let lhs = conj.apply(&x.compose(&exp(&xi))).unwrap();
            let mxi = TangentVector::new(g, &m * xi.vector()).unwrap();
            let rhs = conj.apply(&x).unwrap().compose(&exp(&mxi));
            assert!(lhs.distance(&rhs) < 1e-9, "conjugation identity on {g}");
        }
    }
    // PositionShift on SE_2(3).
    for _ in 0..100 {
        let shift = Automorphism::PositionShift { dt: 0.37 };
        let x = random_element(GroupId::SE23, 0.8, &mut r);
        let xi = random_tangent(GroupId::SE23, 0.6, &mut r);
        let m = shift.matrix(GroupId::SE23).unwrap();
        let lhs = shift.apply(&x.compose(&exp(&xi))).unwrap();
        let mxi = TangentVector::new(GroupId::SE23, &m * xi.vector()).unwrap();
        let rhs = shift.apply(&x).unwrap().compose(&exp(&mxi));
        assert!(lhs.distance(&rhs) < 1e-9);
    }
}

#[test]
fn position_shift_matrix_couples_velocity_into_position() {
    let m = Automorphism::PositionShift { dt: 0.005 }
        .matrix(GroupId::SE23)
        .unwrap();
    for i in 0..3 {
        assert_eq!(m[(6 + i, 3 + i)], 0.005);
    }
    assert_eq!(m[(6, 4)], 0.0);
    assert_eq!(m[(0, 3)], 0.0);
}

#[test]
fn position_shift_rejected_outside_se23() {
    let shift = Automorphism::PositionShift { dt: 0.1 };
    assert!(matches!(
        shift.matrix(GroupId::SE2),
        Err(LieError::UnsupportedAutomorphism { .. })
    ));
    assert!(matches!(
        shift.apply(&GroupElement::identity(GroupId::SO3)),
        Err(LieError::UnsupportedAutomorphism { .. })
    ));
}

#[test]
fn automorphism_composition() {
    let mut r = rng(14);
    let a = Automorphism::PositionShift { dt: 0.2 };
    let b = Automorphism::PositionShift { dt: 0.3 };
    let ab = a.compose_after(&b).unwrap();
    let x = random_element(GroupId::SE23, 0.8, &mut r);
    let lhs = a.apply(&b.apply(&x).unwrap()).unwrap();
    let rhs = ab.apply(&x).unwrap();
    assert!(lhs.distance(&rhs) < 1e-12);

    let g = random_element(GroupId::SE23, 0.5, &mut r);
    let mixed = Automorphism::Conjugation(g).compose_after(&a);
    assert!(mixed.is_none());
}

#[test]
fn from_matrix_rejects_bad_elements() {
    let mut mat = DMatrix::identity(3, 3);
    mat[(0, 0)] = 1.1;
    assert!(GroupElement::from_matrix(GroupId::SE2, mat).is_err());

    let mut mat = DMatrix::identity(3, 3);
    mat[(2, 0)] = 1e-12; // bottom row must be exact
    assert!(GroupElement::from_matrix(GroupId::SE2, mat).is_err());

    // Reflection: orthogonal but det = -1.
    let mut mat = DMatrix::identity(3, 3);
    mat[(0, 0)] = -1.0;
    assert!(GroupElement::from_matrix(GroupId::SO3, mat).is_err());
}

#[test]
fn inverse_composes_to_identity() {
    let mut r = rng(15);
    for g in GROUPS {
        for _ in 0..100 {
            let x = random_element(g, 1.0, &mut r);
            let e = x.compose(&x.inverse());
            assert!(e.distance(&GroupElement::identity(g)) < 1e-13);
        }
    }
}
