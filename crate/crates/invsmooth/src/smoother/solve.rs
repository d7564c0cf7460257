//! Closed-form solution of the linearised chain.
//!
//! The update is `xi = A^-1 (b + Pi L^T S^-1 (r - L b))` with `L = H A^-1`
//! and `S = L Pi L^T + N`. `A^-1` is only ever applied by forward
//! substitution (and its transpose by backward substitution); `Pi` is
//! applied as an operator, with the degenerate prior multiplying through
//! its factored form. The only inverted matrix is the innovation `S`,
//! which is SPD as long as the measurement noises are.

use super::{LinearizedSystem, SmootherError};
use crate::dynamics::ProcessNoise;
use crate::lie::TangentVector;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Maximum admissible condition number of the innovation matrix.
const MAX_INNOVATION_COND: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub xi: Vec<TangentVector>,
    /// Linearised cost at the solution (finite part; exactly-zero noise
    /// residuals vanish by construction).
    pub linearized_cost: f64,
    pub covariances: Option<Vec<DMatrix<f64>>>,
}

/// Solves the chain and returns the per-state tangent updates.
pub fn solve_degenerate_chain(
    sys: &LinearizedSystem,
) -> Result<Vec<TangentVector>, SmootherError> {
    Ok(solve_chain_detailed(sys, false)?.xi)
}

/// Forward substitution `x = A^-1 v`, block row by block row.
fn forward_sub(sys: &LinearizedSystem, v: &DVector<f64>) -> DVector<f64> {
    let q = sys.tangent_dim();
    let mut x = v.clone();
    for i in 0..sys.n_states - 1 {
        let update = &sys.f_mats[i] * x.rows(i * q, q);
        let mut row = x.rows_mut((i + 1) * q, q);
        row += update;
    }
    x
}

fn forward_sub_mat(sys: &LinearizedSystem, v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = sys.tangent_dim();
    let mut x = v.clone();
    for i in 0..sys.n_states - 1 {
        let update = &sys.f_mats[i] * x.rows(i * q, q);
        let mut row = x.rows_mut((i + 1) * q, q);
        row += update;
    }
    x
}

/// Backward substitution `y = A^-T v`.
fn backward_sub_t(sys: &LinearizedSystem, v: &DVector<f64>) -> DVector<f64> {
    let q = sys.tangent_dim();
    let mut y = v.clone();
    for i in (0..sys.n_states - 1).rev() {
        let update = sys.f_mats[i].transpose() * y.rows((i + 1) * q, q);
        let mut row = y.rows_mut(i * q, q);
        row += update;
    }
    y
}

fn backward_sub_t_mat(sys: &LinearizedSystem, v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = sys.tangent_dim();
    let mut y = v.clone();
    for i in (0..sys.n_states - 1).rev() {
        let update = sys.f_mats[i].transpose() * y.rows((i + 1) * q, q);
        let mut row = y.rows_mut(i * q, q);
        row += update;
    }
    y
}

/// Applies the block-diagonal `Pi`; the prior block multiplies through its
/// factors and exactly-zero noise blocks annihilate their rows.
fn apply_pi(sys: &LinearizedSystem, v: &DVector<f64>) -> DVector<f64> {
    let q = sys.tangent_dim();
    let mut out = DVector::zeros(v.len());
    let head = sys.prior_basis.transpose() * v.rows(0, q);
    out.rows_mut(0, q)
        .copy_from(&(&sys.prior_basis * (&sys.prior_coeff_cov * head)));
    for (i, qb) in sys.q_blocks.iter().enumerate() {
        if let ProcessNoise::Cov(qm) = qb {
            let block = qm * v.rows((i + 1) * q, q);
            out.rows_mut((i + 1) * q, q).copy_from(&block);
        }
    }
    out
}

fn apply_pi_mat(sys: &LinearizedSystem, v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = sys.tangent_dim();
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    let head = sys.prior_basis.transpose() * v.rows(0, q);
    out.rows_mut(0, q)
        .copy_from(&(&sys.prior_basis * (&sys.prior_coeff_cov * head)));
    for (i, qb) in sys.q_blocks.iter().enumerate() {
        if let ProcessNoise::Cov(qm) = qb {
            let block = qm * v.rows((i + 1) * q, q);
            out.rows_mut((i + 1) * q, q).copy_from(&block);
        }
    }
    out
}

/// Stacks `H x` over all measurement rows.
fn apply_h(sys: &LinearizedSystem, offsets: &[usize], r_total: usize, x: &DVector<f64>) -> DVector<f64> {
    let q = sys.tangent_dim();
    let mut out = DVector::zeros(r_total);
    for (m, &ofs) in sys.measurements.iter().zip(offsets) {
        let block = &m.jacobian * x.rows(m.state_index * q, q);
        out.rows_mut(ofs, block.len()).copy_from(&block);
    }
    out
}

/// Scatters `H^T z` back into state blocks.
fn apply_h_t(sys: &LinearizedSystem, offsets: &[usize], z: &DVector<f64>) -> DVector<f64> {
    let q = sys.tangent_dim();
    let mut out = DVector::zeros(sys.n_states * q);
    for (m, &ofs) in sys.measurements.iter().zip(offsets) {
        let r = m.jacobian.nrows();
        let add = m.jacobian.transpose() * z.rows(ofs, r);
        let mut row = out.rows_mut(m.state_index * q, q);
        row += add;
    }
    out
}

/// Full solve with optional per-state marginal covariances.
pub fn solve_chain_detailed(
    sys: &LinearizedSystem,
    with_covariances: bool,
) -> Result<SolveOutput, SmootherError> {
    let q = sys.tangent_dim();
    let n1 = sys.n_states;

    let offsets: Vec<usize> = sys
        .measurements
        .iter()
        .scan(0usize, |acc, m| {
            let ofs = *acc;
            *acc += m.jacobian.nrows();
            Some(ofs)
        })
        .collect();
    let r_total: usize = sys.measurements.iter().map(|m| m.jacobian.nrows()).sum();

    if r_total == 0 {
        let xi_vec = forward_sub(sys, &sys.b);
        let covariances = with_covariances.then(|| marginal_covariances(sys, None));
        return Ok(SolveOutput {
            xi: split_blocks(sys, &xi_vec),
            linearized_cost: 0.0,
            covariances,
        });
    }

    // H^T as a tall sparse-block matrix, then L^T = A^-T H^T.
    let mut ht = DMatrix::zeros(n1 * q, r_total);
    for (m, &ofs) in sys.measurements.iter().zip(&offsets) {
        let r = m.jacobian.nrows();
        ht.view_mut((m.state_index * q, ofs), (q, r))
            .copy_from(&m.jacobian.transpose());
    }
    let lt = backward_sub_t_mat(sys, &ht);
    let y = apply_pi_mat(sys, &lt); // Pi L^T
    let g = forward_sub_mat(sys, &y); // A^-1 Pi L^T

    // Innovation S = L Pi L^T + N.
    let mut s_inn = DMatrix::zeros(r_total, r_total);
    for (m, &ofs) in sys.measurements.iter().zip(&offsets) {
        let r = m.jacobian.nrows();
        let rows = &m.jacobian * g.rows(m.state_index * q, q);
        s_inn.view_mut((ofs, 0), (r, r_total)).copy_from(&rows);
        let mut diag = s_inn.view_mut((ofs, ofs), (r, r));
        diag += &m.noise_cov;
    }
    let s_inn = (&s_inn + s_inn.transpose()) * 0.5;

    let eig = s_inn.clone().symmetric_eigenvalues();
    let (lam_min, lam_max) = (eig.min(), eig.max());
    if lam_min <= 0.0 || lam_max / lam_min > MAX_INNOVATION_COND {
        return Err(SmootherError::SingularInnovation {
            cond: if lam_min > 0.0 {
                lam_max / lam_min
            } else {
                f64::INFINITY
            },
        });
    }
    let chol = Cholesky::new(s_inn).ok_or(SmootherError::SingularInnovation {
        cond: lam_max / lam_min,
    })?;

    let n_hat = {
        let mut v = DVector::zeros(r_total);
        for (m, &ofs) in sys.measurements.iter().zip(&offsets) {
            v.rows_mut(ofs, m.residual.len()).copy_from(&m.residual);
        }
        v
    };

    let lb = apply_h(sys, &offsets, r_total, &forward_sub(sys, &sys.b));
    let u = chol.solve(&(&n_hat - lb));
    let v = backward_sub_t(sys, &apply_h_t(sys, &offsets, &u));
    let pv = apply_pi(sys, &v);
    let xi_vec = forward_sub(sys, &(&sys.b + &pv));

    // Cost at the solution: the Pi-weighted residual is Pi*v, so its
    // weighted square is v^T Pi v without any inversion of Pi.
    let mut cost = v.dot(&pv);
    let h_xi = apply_h(sys, &offsets, r_total, &xi_vec);
    for (m, &ofs) in sys.measurements.iter().zip(&offsets) {
        let r = m.residual.len();
        let res = h_xi.rows(ofs, r).into_owned() - &m.residual;
        if let Some(nc) = Cholesky::new(m.noise_cov.clone()) {
            cost += res.dot(&nc.solve(&res));
        }
    }

    let covariances = with_covariances.then(|| marginal_covariances(sys, Some((&g, &chol))));

    Ok(SolveOutput {
        xi: split_blocks(sys, &xi_vec),
        linearized_cost: cost,
        covariances,
    })
}

fn split_blocks(sys: &LinearizedSystem, xi: &DVector<f64>) -> Vec<TangentVector> {
    let q = sys.tangent_dim();
    (0..sys.n_states)
        .map(|i| {
            TangentVector::new(sys.group, xi.rows(i * q, q).into_owned())
                .expect("block size equals tangent dimension")
        })
        .collect()
}

/// Per-state marginal covariances `P_i = C_i - G_i S^-1 G_i^T` where
/// `C` is the open-loop propagation of `Pi` through the chain and `G`
/// carries the measurement information.
fn marginal_covariances(
    sys: &LinearizedSystem,
    info: Option<(&DMatrix<f64>, &Cholesky<f64, nalgebra::Dyn>)>,
) -> Vec<DMatrix<f64>> {
    let q = sys.tangent_dim();
    let mut c = &sys.prior_basis * &sys.prior_coeff_cov * sys.prior_basis.transpose();
    let mut out = Vec::with_capacity(sys.n_states);
    for i in 0..sys.n_states {
        if i > 0 {
            let f = &sys.f_mats[i - 1];
            c = f * &c * f.transpose();
            if let ProcessNoise::Cov(qm) = &sys.q_blocks[i - 1] {
                c += qm;
            }
        }
        let mut p = c.clone();
        if let Some((g, chol)) = info {
            let gi = g.rows(i * q, q).into_owned();
            let x = chol.solve(&gi.transpose());
            p -= &gi * x;
        }
        out.push((&p + p.transpose()) * 0.5);
    }
    out
}
