//! Removal of the oldest state of a chain, installing an equivalent prior
//! on its successor.
//!
//! Two paths: when the first transition is deterministic and the oldest
//! state carries no measurement, the prior is pushed analytically (mean
//! through the step, basis through the log-linear matrix), which is exact
//! and keeps the factored form bit for bit. Otherwise the factors touching
//! the oldest state are linearised and eliminated by a covariance-form
//! Schur complement (condition on the measurements, then propagate), which
//! never inverts the possibly singular prior or process noise and equals
//! the information-form elimination in the linear-Gaussian case.

use super::{
    DegeneratePrior, FactorChainProblem, MeasurementFactor, SmootherError, TrajectoryEstimate,
};
use crate::dynamics::ProcessNoise;
use crate::lie::{exp, log, right_jacobian_inverse, TangentVector};
use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue threshold below which a direction is treated as
/// exactly pinned when re-factoring the pushed covariance. Only directions
/// that are zero to machine precision may be dropped: truncating a real
/// (merely small) variance would leave a mixed eigenbasis that is no
/// longer bracket-closed.
const RANK_EPS: f64 = 1e-14;

pub fn marginalize_oldest(
    problem: &FactorChainProblem,
    est: &TrajectoryEstimate,
) -> Result<(FactorChainProblem, TrajectoryEstimate), SmootherError> {
    if problem.steps.is_empty() || est.states.len() < 2 {
        return Err(SmootherError::ChainTooShort);
    }
    if est.states.len() != problem.n_states() {
        return Err(SmootherError::InvalidProblem(format!(
            "estimate has {} states, chain needs {}",
            est.states.len(),
            problem.n_states()
        )));
    }
    let group = problem.group();
    let q = group.tangent_dim();
    let s0 = &problem.steps[0];
    let (meas0, meas_rest): (Vec<_>, Vec<_>) = problem
        .measurements
        .iter()
        .cloned()
        .partition(|m| m.time_index == 0);

    let new_prior = if s0.q_cov().is_zero() && meas0.is_empty() {
        // Analytic push: exact under the log-linear property.
        DegeneratePrior::new(
            s0.step(problem.prior.mean())?,
            s0.log_linear_matrix() * problem.prior.basis(),
            problem.prior.coeff_cov().clone(),
        )?
    } else {
        // Covariance-form elimination at the current estimates.
        let x0 = &est.states[0];
        let x1 = &est.states[1];
        let p0 = log(&problem.prior.mean().inverse().compose(x0)).map_err(|e| {
            SmootherError::LinearizationFailure {
                index: 0,
                source: e,
            }
        })?;
        let e_tilde = right_jacobian_inverse(&p0) * problem.prior.basis();
        let mut mu: DVector<f64> = -p0.vector();
        let mut sigma = &e_tilde * problem.prior.coeff_cov() * e_tilde.transpose();
        for m in &meas0 {
            let h = m.model.jacobian(x0);
            let r = m.model.residual(&m.value, x0);
            let s = &h * &sigma * h.transpose() + &m.noise_cov;
            let s_chol = nalgebra::Cholesky::new((&s + s.transpose()) * 0.5).ok_or(
                SmootherError::SingularInnovation { cond: f64::INFINITY },
            )?;
            let k = &sigma * h.transpose() * s_chol.inverse();
            mu += &k * (r - &h * &mu);
            let i_kh = DMatrix::identity(q, q) - &k * &h;
            sigma = &i_kh * &sigma * i_kh.transpose() + &k * &m.noise_cov * k.transpose();
        }
        let a0 = log(&s0.step(x0)?.inverse().compose(x1)).map_err(|e| {
            SmootherError::LinearizationFailure {
                index: 1,
                source: e,
            }
        })?;
        let f0 = s0.log_linear_matrix();
        let mu1 = &f0 * mu - a0.vector();
        let mut sigma1 = &f0 * sigma * f0.transpose();
        if let ProcessNoise::Cov(qm) = s0.q_cov() {
            sigma1 += qm;
        }
        // Re-anchor the Gaussian at its own mean and transport the
        // covariance accordingly.
        let mu1_t = TangentVector::new(group, mu1.clone()).expect("tangent dimension");
        let jr = right_jacobian_inverse(&mu1_t);
        let sigma_z = &jr * sigma1 * jr.transpose();
        let sigma_z = (&sigma_z + sigma_z.transpose()) * 0.5;
        let mean1 = x1.compose(&exp(&mu1_t));
        install_prior(mean1, &sigma_z)?
    };

    let mut new_measurements = Vec::with_capacity(meas_rest.len());
    for m in meas_rest {
        new_measurements.push(MeasurementFactor {
            time_index: m.time_index - 1,
            ..m
        });
    }
    let new_problem = FactorChainProblem::new(
        new_prior,
        problem.steps[1..].to_vec(),
        new_measurements,
    )?;
    let new_est = TrajectoryEstimate::from_states(est.states[1..].to_vec());
    Ok((new_problem, new_est))
}

/// Re-factors a PSD tangent covariance into a `DegeneratePrior`: full rank
/// with a tiny eigenvalue floor when well conditioned, otherwise the
/// dominant eigenbasis with its eigenvalue block.
fn install_prior(
    mean: crate::lie::GroupElement,
    sigma: &DMatrix<f64>,
) -> Result<DegeneratePrior, SmootherError> {
    let q = sigma.nrows();
    let eig = sigma.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let lam_min = eig.eigenvalues.min();
    if lam_min > RANK_EPS * lam_max {
        let floor = lam_max * 1e-15;
        let vals = eig.eigenvalues.map(|l| l.max(floor));
        let s = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        DegeneratePrior::full_rank(mean, (&s + s.transpose()) * 0.5)
    } else {
        let keep: Vec<usize> = (0..q)
            .filter(|&k| eig.eigenvalues[k] > RANK_EPS * lam_max)
            .collect();
        if keep.is_empty() {
            return Err(SmootherError::InvalidProblem(
                "marginalised covariance collapsed to rank zero".into(),
            ));
        }
        let mut basis = DMatrix::zeros(q, keep.len());
        let mut s = DMatrix::zeros(keep.len(), keep.len());
        for (j, &k) in keep.iter().enumerate() {
            basis.column_mut(j).copy_from(&eig.eigenvectors.column(k));
            s[(j, j)] = eig.eigenvalues[k];
        }
        DegeneratePrior::new(mean, basis, s)
    }
}
