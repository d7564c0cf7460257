//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line with its measured figure and enforcing its runtime
//! budget. Tolerances are pinned here and nowhere else.

use invsmooth::dynamics::{GroupAffineStep, ProcessNoise};
use invsmooth::lie::{
    adjoint, exp, log, right_jacobian, Automorphism, GroupElement, GroupId, TangentVector,
};
use invsmooth::models::{gps_measurement, ins_step, robot2d_step, se2_pose, InsConfig, Robot2dConfig};
use invsmooth::sim::{make_ins_truth, run_monte_carlo, run_robot2d_batch, EstimatorConfig};
use invsmooth::smoother::{
    gauss_newton, linearize, marginalize_oldest, orth, solve_degenerate_chain, DegeneratePrior,
    FactorChainProblem, GaussNewtonOpts, LinearizedSystem, MeasurementFactor, MeasurementModelId,
    RetractionKind, TrajectoryEstimate,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

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

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Planar length preservation under the invariant strategy
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_planar_length_preservation() {
    let t0 = Instant::now();
    let cfg = Robot2dConfig::default(); // 7 m/s, -3pi/4 heading error, rank-1 prior
    let true_length = cfg.speed * cfg.dt * cfg.n_steps as f64;

    let (inv, _) = run_robot2d_batch(&cfg, RetractionKind::Invariant, 1).unwrap();
    let mut worst_rel = 0.0_f64;
    let mut worst_dyn = 0.0_f64;
    for rec in &inv.iteration_log {
        worst_rel = worst_rel.max((rec.trajectory_length - true_length).abs() / true_length);
        worst_dyn = worst_dyn.max(rec.max_dynamics_residual);
    }

    let (gts, _) = run_robot2d_batch(&cfg, RetractionKind::GtsamLinear, 1).unwrap();
    let max_gts_rel = gts
        .iteration_log
        .iter()
        .map(|r| (r.trajectory_length - true_length).abs() / true_length)
        .fold(0.0_f64, f64::max);

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "1 (length preservation)",
        worst_rel < 1e-9 && worst_dyn < 1e-8 && max_gts_rel > 0.01 && elapsed < 1.0,
        &format!(
            "invariant rel dev {worst_rel:.2e}, dyn resid {worst_dyn:.2e}; \
             gtsam max dev {:.1}%; {elapsed:.2}s",
            100.0 * max_gts_rel
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Zero-noise constraint satisfaction at every iterate
// ---------------------------------------------------------------------------

/// Subalgebra prior: a canonical slot set conjugated by a random element
/// (conjugation preserves bracket closure), with random SPD coefficients.
fn random_subalgebra_prior(g: GroupId, r: &mut ChaCha12Rng) -> (DegeneratePrior, GroupElement) {
    let q = g.tangent_dim();
    let choices: Vec<Vec<usize>> = match g {
        GroupId::SE2 => vec![vec![2], vec![0, 1], vec![0, 1, 2]],
        GroupId::SE23 => vec![
            vec![2, 3, 4, 5],
            vec![0, 1, 2, 3, 4, 5],
            vec![3, 4, 5, 6, 7, 8],
            vec![2, 3, 4, 5, 6, 7, 8],
            (0..9).collect(),
        ],
        _ => vec![(0..q).collect()],
    };
    let slots = &choices[r.random_range(0..choices.len())];
    let mut basis = DMatrix::zeros(q, slots.len());
    for (j, &s) in slots.iter().enumerate() {
        basis[(s, j)] = 1.0;
    }
    let basis = adjoint(&random_element(g, 0.5, r)) * basis;
    let p = slots.len();
    let a = DMatrix::from_fn(p, p, |_, _| r.random_range(-0.5..0.5));
    let coeff_cov = &a * a.transpose() + DMatrix::identity(p, p) * 0.4;
    let mean = random_element(g, 0.5, r);
    let coeffs = DVector::from_fn(p, |_, _| r.random_range(-0.4..0.4));
    let x0 = mean.compose(&exp(&TangentVector::new(g, &basis * coeffs).unwrap()));
    (DegeneratePrior::new(mean, basis, coeff_cov).unwrap(), x0)
}

#[test]
fn criterion_2_zero_noise_constraint_suite() {
    let t0 = Instant::now();
    let mut r = rng(2);
    let mut worst_dyn = 0.0_f64;
    let mut worst_orth = 0.0_f64;
    let mut worst_chain = 0.0_f64;
    for trial in 0..100 {
        let g = if trial % 2 == 0 { GroupId::SE2 } else { GroupId::SE23 };
        let n = r.random_range(2..=20);
        let (prior, x0) = random_subalgebra_prior(g, &mut r);
        let steps: Vec<GroupAffineStep> = (0..n)
            .map(|_| {
                let phi = if g == GroupId::SE23 && r.random_range(0..2) == 0 {
                    Automorphism::PositionShift {
                        dt: r.random_range(0.01..0.2),
                    }
                } else {
                    Automorphism::Identity
                };
                GroupAffineStep::new(
                    random_element(g, 0.3, &mut r),
                    phi,
                    random_element(g, 0.3, &mut r),
                    ProcessNoise::Zero,
                    0.1,
                )
                .unwrap()
            })
            .collect();
        let dim = g.rotation_dim();
        let measurements: Vec<MeasurementFactor> = (1..=n)
            .map(|k| {
                MeasurementFactor::new(
                    k,
                    DVector::from_fn(dim, |_, _| r.random_range(-3.0..3.0)),
                    DMatrix::identity(dim, dim) * r.random_range(0.3..2.0),
                    MeasurementModelId::Position,
                )
                .unwrap()
            })
            .collect();
        let mut states = vec![x0];
        for s in &steps {
            states.push(s.step(states.last().unwrap()).unwrap());
        }
        let problem = FactorChainProblem::new(prior, steps, measurements).unwrap();
        let strategy = RetractionKind::Invariant.strategy();
        for _ in 0..4 {
            let sys = linearize(&problem, &states, strategy).unwrap();
            let xi = solve_degenerate_chain(&sys).unwrap();
            let u = orth(&sys.prior_basis);
            let off = xi[0].vector() - &u * (u.transpose() * xi[0].vector());
            worst_orth = worst_orth.max(off.norm());
            for i in 0..n {
                worst_chain = worst_chain
                    .max((xi[i + 1].vector() - &sys.f_mats[i] * xi[i].vector()).amax());
            }
            for (i, x) in xi.iter().enumerate() {
                states[i] = strategy.apply(&states[i], x);
            }
            for (i, s) in problem.steps.iter().enumerate() {
                let resid =
                    log(&s.step(&states[i]).unwrap().inverse().compose(&states[i + 1])).unwrap();
                worst_dyn = worst_dyn.max(resid.norm());
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "2 (zero-noise constraint suite)",
        worst_dyn < 1e-8 && worst_orth < 1e-8 && worst_chain < 1e-8 && elapsed < 30.0,
        &format!(
            "100 chains: dyn {worst_dyn:.2e}, off-span {worst_orth:.2e}, \
             chained-update {worst_chain:.2e}; {elapsed:.2}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Closed-form chain solver against analytic and regularised oracles
// ---------------------------------------------------------------------------

/// Whitened dense least squares with every noise block regularised by
/// `eps * I`; solved by SVD. An independent algebra route.
fn dense_regularized(sys: &LinearizedSystem, eps: f64) -> DVector<f64> {
    let q = sys.tangent_dim();
    let n1 = sys.n_states;
    let nq = n1 * q;
    let r_total: usize = sys.measurements.iter().map(|m| m.jacobian.nrows()).sum();
    let mut a = DMatrix::identity(nq, nq);
    for i in 0..n1 - 1 {
        a.view_mut(((i + 1) * q, i * q), (q, q))
            .copy_from(&(-&sys.f_mats[i]));
    }
    let mut h = DMatrix::zeros(r_total, nq);
    let mut n_hat = DVector::zeros(r_total);
    let mut n_cov = DMatrix::zeros(r_total, r_total);
    let mut ofs = 0;
    for m in &sys.measurements {
        let rr = m.jacobian.nrows();
        h.view_mut((ofs, m.state_index * q), (rr, q))
            .copy_from(&m.jacobian);
        n_hat.rows_mut(ofs, rr).copy_from(&m.residual);
        n_cov.view_mut((ofs, ofs), (rr, rr)).copy_from(&m.noise_cov);
        ofs += rr;
    }
    let mut pi = DMatrix::zeros(nq, nq);
    let prior = &sys.prior_basis * &sys.prior_coeff_cov * sys.prior_basis.transpose()
        + DMatrix::identity(q, q) * eps;
    pi.view_mut((0, 0), (q, q)).copy_from(&prior);
    for (i, qb) in sys.q_blocks.iter().enumerate() {
        let block = qb.to_matrix(q) + DMatrix::identity(q, q) * eps;
        pi.view_mut(((i + 1) * q, (i + 1) * q), (q, q))
            .copy_from(&block);
    }
    let inv_sqrt = |m: &DMatrix<f64>| {
        let eig = m.clone().symmetric_eigen();
        let vals = eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
    };
    let w_pi = inv_sqrt(&pi);
    let w_n = inv_sqrt(&n_cov);
    let mut stacked = DMatrix::zeros(nq + r_total, nq);
    stacked.view_mut((0, 0), (nq, nq)).copy_from(&(&w_pi * &a));
    stacked
        .view_mut((nq, 0), (r_total, nq))
        .copy_from(&(&w_n * &h));
    let mut rhs = DVector::zeros(nq + r_total);
    rhs.rows_mut(0, nq).copy_from(&(&w_pi * &sys.b));
    rhs.rows_mut(nq, r_total).copy_from(&(&w_n * &n_hat));
    stacked.svd(true, true).solve(&rhs, 1e-14).unwrap()
}

#[test]
fn criterion_3_solver_oracles() {
    let t0 = Instant::now();

    // Scalar chain: x0 ~ N(0,1), x1 = x0, y = x1 + n, n ~ N(0,1), y = 1.
    // Posterior mean 0.5 for both states, exact.
    let scalar = LinearizedSystem {
        group: GroupId::SO2,
        n_states: 2,
        prior_basis: DMatrix::identity(1, 1),
        prior_coeff_cov: DMatrix::identity(1, 1),
        b: DVector::zeros(2),
        f_mats: vec![DMatrix::identity(1, 1)],
        q_blocks: vec![ProcessNoise::Zero],
        measurements: vec![invsmooth::smoother::LinearizedMeasurement {
            state_index: 1,
            jacobian: DMatrix::identity(1, 1),
            residual: DVector::from_column_slice(&[1.0]),
            noise_cov: DMatrix::identity(1, 1),
        }],
        prior_subspace_drift: 0.0,
    };
    let xi = solve_degenerate_chain(&scalar).unwrap();
    let scalar_err = (xi[0].vector()[0] - 0.5)
        .abs()
        .max((xi[1].vector()[0] - 0.5).abs());

    // Regularised chains on the planar scenario converge to the eps = 0
    // closed form.
    let mut r = rng(3);
    let cfg = Robot2dConfig {
        n_steps: 5,
        ..Default::default()
    };
    let step = robot2d_step(&cfg);
    let prior = cfg.prior().unwrap();
    let mut states = vec![prior.mean().clone()];
    for _ in 0..cfg.n_steps {
        states.push(step.step(states.last().unwrap()).unwrap());
    }
    let measurements: Vec<MeasurementFactor> = (1..=cfg.n_steps)
        .map(|k| {
            MeasurementFactor::new(
                k,
                states[k].position().unwrap()
                    + DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0)),
                DMatrix::identity(2, 2),
                MeasurementModelId::Position,
            )
            .unwrap()
        })
        .collect();
    let problem =
        FactorChainProblem::new(prior, vec![step; cfg.n_steps], measurements).unwrap();
    let sys = linearize(&problem, &states, RetractionKind::Invariant.strategy()).unwrap();
    let q = 3;
    let exact = {
        let xi = solve_degenerate_chain(&sys).unwrap();
        let mut v = DVector::zeros(sys.n_states * q);
        for (i, x) in xi.iter().enumerate() {
            v.rows_mut(i * q, q).copy_from(x.vector());
        }
        v
    };
    let errs: Vec<f64> = [1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&eps| (dense_regularized(&sys, eps) - &exact).norm())
        .collect();
    let monotone = errs[0] > errs[1] && errs[1] > errs[2];
    let order = (errs[0] / errs[2]).log10() / 4.0;

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "3 (solver oracles)",
        scalar_err < 1e-12 && monotone && order >= 0.9 && elapsed < 5.0,
        &format!(
            "scalar err {scalar_err:.2e}; eps errors {:.2e}/{:.2e}/{:.2e}, order {order:.2}; {elapsed:.2}s",
            errs[0], errs[1], errs[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Exact log-linearity of both models
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_log_linearity_exactness() {
    let t0 = Instant::now();
    let mut r = rng(4);
    let robot = robot2d_step(&Robot2dConfig::default());
    let ins = ins_step(
        &Vector3::new(0.3, -0.2, 0.5),
        &Vector3::new(1.2, 0.4, 9.6),
        0.005,
        &Vector3::new(0.0, 0.0, -9.81),
        0.0,
        0.0,
    );
    let mut worst = 0.0_f64;
    for step in [&robot, &ins] {
        let g = step.group();
        let f = step.log_linear_matrix();
        let scale = 1.0 / (g.tangent_dim() as f64).sqrt();
        for _ in 0..1000 {
            let x = random_element(g, 0.7, &mut r);
            let xi = random_tangent(g, scale, &mut r);
            let lhs = step.step(&x.compose(&exp(&xi))).unwrap();
            let fxi = TangentVector::new(g, &f * xi.vector()).unwrap();
            let rhs = step.step(&x).unwrap().compose(&exp(&fxi));
            worst = worst.max(lhs.distance(&rhs));
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "4 (log-linearity exactness)",
        worst < 1e-10 && elapsed < 5.0,
        &format!("worst identity gap {worst:.2e} over 2000 samples; {elapsed:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// 5. Inertial alignment study
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_ins_alignment() {
    let t0 = Instant::now();
    let cfg = InsConfig::default(); // 200 Hz / 1 Hz, 80 deg error, 40 s
    let truth = make_ins_truth(&cfg);
    let initial_err_deg = cfg.heading_error.to_degrees();
    let runs = 10;
    let seed = 5;

    let inv50 = run_monte_carlo(
        &truth,
        &cfg,
        &EstimatorConfig {
            retraction: RetractionKind::Invariant,
            window: 50,
            iters_per_update: 1,
        },
        runs,
        seed,
    )
    .unwrap();
    let inv10 = run_monte_carlo(
        &truth,
        &cfg,
        &EstimatorConfig {
            retraction: RetractionKind::Invariant,
            window: 10,
            iters_per_update: 1,
        },
        runs,
        seed,
    )
    .unwrap();
    let gts10 = run_monte_carlo(
        &truth,
        &cfg,
        &EstimatorConfig {
            retraction: RetractionKind::GtsamLinear,
            window: 10,
            iters_per_update: 1,
        },
        runs,
        seed,
    )
    .unwrap();

    let rmse_ok = inv50.final_rmse_deg < initial_err_deg / 10.0;
    let consistency_ok = inv50.runs_within_3sigma_at_end >= 9;
    // Peak comparison over the convergence phase, where the heading is
    // observable; before motion onset the yaw error is pure shared prior
    // wander and identical for every strategy.
    let peak_ok = inv10.mean_convergence_peak_deg <= gts10.mean_convergence_peak_deg;
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "5 (inertial alignment)",
        rmse_ok && consistency_ok && peak_ok && elapsed < 300.0,
        &format!(
            "w50 final RMSE {:.3} deg (< {:.0}), {}/{} in 3-sigma; \
             w10 convergence peak invariant {:.3} vs gtsam {:.3} deg; {elapsed:.1}s",
            inv50.final_rmse_deg,
            initial_err_deg / 10.0,
            inv50.runs_within_3sigma_at_end,
            runs,
            inv10.mean_convergence_peak_deg,
            gts10.mean_convergence_peak_deg
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Analytic Jacobians against central finite differences
// ---------------------------------------------------------------------------

/// Median error-shrinkage ratio of a central difference against the
/// analytic directional derivative when eps halves; ~4 for a correct
/// Jacobian.
fn median_ratio(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

#[test]
fn criterion_6_jacobian_finite_difference_suite() {
    let t0 = Instant::now();
    let mut r = rng(6);
    let eps = 1e-3;
    let mut all_ok = true;
    let mut details = String::new();

    // Measurement Jacobians.
    for g in [GroupId::SE2, GroupId::SE23] {
        let mut ratios = Vec::new();
        for _ in 0..15 {
            let x = random_element(g, 0.8, &mut r);
            let (_, h) = gps_measurement(&x);
            let d = random_tangent(g, 1.0, &mut r);
            let fd = |e: f64| {
                let p = x
                    .compose(&exp(&TangentVector::new(g, d.vector() * e).unwrap()))
                    .position()
                    .unwrap();
                let m = x
                    .compose(&exp(&TangentVector::new(g, d.vector() * -e).unwrap()))
                    .position()
                    .unwrap();
                (p - m) / (2.0 * e)
            };
            let analytic = &h * d.vector();
            let e1 = (fd(eps) - &analytic).norm();
            let e2 = (fd(eps / 2.0) - &analytic).norm();
            if e2 > 1e-13 {
                ratios.push(e1 / e2);
            }
        }
        let med = median_ratio(&mut ratios);
        all_ok &= (3.5..=4.5).contains(&med);
        details.push_str(&format!("H[{g}] {med:.2}; "));
    }

    // Retraction step Jacobians at on-dynamics points.
    for kind in RetractionKind::all() {
        let strategy = kind.strategy();
        let mut ratios = Vec::new();
        for _ in 0..15 {
            let s = GroupAffineStep::new(
                random_element(GroupId::SE23, 0.3, &mut r),
                Automorphism::PositionShift { dt: 0.05 },
                random_element(GroupId::SE23, 0.3, &mut r),
                ProcessNoise::Zero,
                0.05,
            )
            .unwrap();
            let x = random_element(GroupId::SE23, 0.6, &mut r);
            let y = s.step(&x).unwrap();
            let f = strategy.step_jacobian(&s, &x, &y);
            let u_i = random_tangent(GroupId::SE23, 1.0, &mut r).into_vector();
            let u_n = random_tangent(GroupId::SE23, 1.0, &mut r).into_vector();
            let analytic = -&f * &u_i + &u_n;
            let resid = |e: f64| {
                let a = s
                    .step(&strategy.apply(
                        &x,
                        &TangentVector::new(GroupId::SE23, &u_i * e).unwrap(),
                    ))
                    .unwrap();
                let b = strategy.apply(&y, &TangentVector::new(GroupId::SE23, &u_n * e).unwrap());
                let raw = log(&a.inverse().compose(&b)).unwrap().into_vector();
                strategy.tangent_map(&y).transpose() * raw
            };
            let fd = |e: f64| (resid(e) - resid(-e)) / (2.0 * e);
            let e1 = (fd(eps) - &analytic).norm();
            let e2 = (fd(eps / 2.0) - &analytic).norm();
            if e2 > 1e-13 {
                ratios.push(e1 / e2);
            }
        }
        let med = median_ratio(&mut ratios);
        all_ok &= (3.5..=4.5).contains(&med);
        details.push_str(&format!("F[{}] {med:.2}; ", strategy.name()));
    }

    // Right Jacobian of the groups with nontrivial brackets.
    for g in [GroupId::SE2, GroupId::SO3, GroupId::SE23] {
        let mut ratios = Vec::new();
        for _ in 0..15 {
            let v = random_tangent(g, 0.8, &mut r);
            let j = right_jacobian(&v);
            let d = random_tangent(g, 1.0, &mut r).into_vector();
            let base = exp(&v);
            let fd = |e: f64| {
                let p = log(&base.compose(&exp(&TangentVector::new(g, &d * e).unwrap()))).unwrap();
                let m = log(&base.compose(&exp(&TangentVector::new(g, &d * -e).unwrap()))).unwrap();
                (p.vector() - m.vector()) / (2.0 * e)
            };
            let analytic = &j * &d;
            let e1 = (fd(eps) - &analytic).norm();
            let e2 = (fd(eps / 2.0) - &analytic).norm();
            if e2 > 1e-13 {
                ratios.push(e1 / e2);
            }
        }
        let med = median_ratio(&mut ratios);
        all_ok &= (3.5..=4.5).contains(&med);
        details.push_str(&format!("J[{g}] {med:.2}; "));
    }

    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "6 (jacobian finite differences)",
        all_ok && elapsed < 10.0,
        &format!("median shrink ratios: {details}{elapsed:.2}s"),
    );
}

// ---------------------------------------------------------------------------
// 7. Sliding-window marginalisation equals full batch in the linear case
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_marginalisation_exactness() {
    let t0 = Instant::now();
    let mut r = rng(7);
    let translation = |x: f64, y: f64| se2_pose(0.0, x, y);
    let prior = DegeneratePrior::new(
        translation(0.3, -0.4),
        DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_column_slice(&[0.6, 0.9])),
    )
    .unwrap();
    let n = 10;
    let window = 4;
    let steps: Vec<GroupAffineStep> = (0..n)
        .map(|_| {
            GroupAffineStep::new(
                translation(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)),
                Automorphism::Identity,
                GroupElement::identity(GroupId::SE2),
                ProcessNoise::Cov(DMatrix::from_diagonal(&DVector::from_column_slice(&[
                    0.04, 0.07, 0.0,
                ]))),
                1.0,
            )
            .unwrap()
        })
        .collect();
    let meas: Vec<MeasurementFactor> = (1..=n)
        .map(|k| {
            MeasurementFactor::new(
                k,
                DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0)),
                DMatrix::identity(2, 2) * 0.5,
                MeasurementModelId::Position,
            )
            .unwrap()
        })
        .collect();

    let strategy = RetractionKind::Invariant.strategy();
    let batch_problem =
        FactorChainProblem::new(prior.clone(), steps.clone(), meas.clone()).unwrap();
    let init = TrajectoryEstimate::from_states(vec![prior.mean().clone(); n + 1]);
    let batch = gauss_newton(
        &batch_problem,
        init,
        strategy,
        &GaussNewtonOpts {
            project_init: true,
            max_iters: 8,
            ..Default::default()
        },
    )
    .unwrap();

    let mut problem = FactorChainProblem::new(prior.clone(), vec![], vec![]).unwrap();
    let mut est = TrajectoryEstimate::from_states(vec![prior.mean().clone()]);
    for k in 0..n {
        problem.steps.push(steps[k].clone());
        est.states
            .push(steps[k].step(est.states.last().unwrap()).unwrap());
        let mut m = meas[k].clone();
        m.time_index = problem.steps.len();
        problem.measurements.push(m);
        est = gauss_newton(
            &problem,
            est,
            strategy,
            &GaussNewtonOpts {
                max_iters: 8,
                ..Default::default()
            },
        )
        .unwrap();
        if est.states.len() > window {
            let (p, e) = marginalize_oldest(&problem, &est).unwrap();
            problem = p;
            est = e;
        }
    }

    let offset = batch.states.len() - est.states.len();
    let mut worst = 0.0_f64;
    for (i, s) in est.states.iter().enumerate() {
        worst = worst.max(s.distance(&batch.states[offset + i]));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        "7 (marginalisation exactness)",
        worst < 1e-8 && elapsed < 2.0,
        &format!("surviving-state gap {worst:.2e} over {window}-state window; {elapsed:.2}s"),
    );
}
