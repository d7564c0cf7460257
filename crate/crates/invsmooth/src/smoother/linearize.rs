//! Linearisation of a factor chain around a trajectory estimate, in the
//! left-invariant parameterisation `x_i = est_i * exp(xi_i)`.
//!
//! The prior covariance is carried in factored form: the basis is mapped by
//! the inverse right Jacobian of the prior residual, and the coefficient
//! covariance stays untouched, so a rank-deficient prior never needs a
//! pseudo-inverse.

use super::retraction::Retraction;
use super::{off_span_norm, orth, FactorChainProblem, SmootherError};
use crate::dynamics::ProcessNoise;
use crate::lie::{log, right_jacobian_inverse, GroupElement, GroupId};
use nalgebra::{DMatrix, DVector};

/// One linearised unary measurement: residual `y - h(est)` and the Jacobian
/// of `h(est * exp(xi))` in the retraction parameterisation.
#[derive(Debug, Clone)]
pub struct LinearizedMeasurement {
    pub state_index: usize,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

/// Blocks of the quadratic subproblem
/// `|A xi - b|^2_Pi + sum_k |H_k xi - r_k|^2_N_k` where `A` is unit lower
/// block-bidiagonal with `-F_i` below the diagonal and
/// `Pi = diag(E S E^T, Q_0, ..., Q_{n-1})`.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub group: GroupId,
    pub n_states: usize,
    /// Factored prior block: basis (already mapped by the prior Jacobian)
    /// and SPD coefficient covariance.
    pub prior_basis: DMatrix<f64>,
    pub prior_coeff_cov: DMatrix<f64>,
    /// Stacked right-hand side `[-p0; -a_0; ...; -a_{n-1}]`.
    pub b: DVector<f64>,
    pub f_mats: Vec<DMatrix<f64>>,
    pub q_blocks: Vec<ProcessNoise>,
    pub measurements: Vec<LinearizedMeasurement>,
    /// Component of the prior residual outside the prior subspace; zero for
    /// the invariant strategy on subalgebra priors, grows for the linear
    /// retractions.
    pub prior_subspace_drift: f64,
}

impl LinearizedSystem {
    pub fn tangent_dim(&self) -> usize {
        self.group.tangent_dim()
    }

    /// Finite part of the linearised cost evaluated at `xi = 0`: prior
    /// coefficient cost, SPD dynamics residual costs (pseudo-inverse for
    /// singular PSD blocks) and measurement costs. Residuals of exactly-zero
    /// noise blocks are excluded; they are hard constraints.
    pub fn cost_at_zero(&self) -> f64 {
        let q = self.tangent_dim();
        let mut cost = 0.0;
        let p0 = -self.b.rows(0, q).into_owned();
        let coeffs = self
            .prior_basis
            .clone()
            .svd(true, true)
            .solve(&p0, 1e-12)
            .expect("svd solve of prior coefficients");
        if let Some(chol) = nalgebra::Cholesky::new(self.prior_coeff_cov.clone()) {
            cost += coeffs.dot(&chol.solve(&coeffs));
        }
        for (i, qb) in self.q_blocks.iter().enumerate() {
            if let ProcessNoise::Cov(qm) = qb {
                let a = -self.b.rows((i + 1) * q, q).into_owned();
                if let Ok(x) = qm.clone().svd(true, true).solve(&a, 1e-12) {
                    cost += a.dot(&x);
                }
            }
        }
        for m in &self.measurements {
            if let Some(chol) = nalgebra::Cholesky::new(m.noise_cov.clone()) {
                cost += m.residual.dot(&chol.solve(&m.residual));
            }
        }
        cost
    }
}

/// Linearises the chain at `states` under the given retraction strategy.
pub fn linearize(
    problem: &FactorChainProblem,
    states: &[GroupElement],
    retraction: &dyn Retraction,
) -> Result<LinearizedSystem, SmootherError> {
    let group = problem.group();
    let q = group.tangent_dim();
    let n_states = problem.n_states();
    if states.len() != n_states {
        return Err(SmootherError::InvalidProblem(format!(
            "estimate has {} states, chain needs {n_states}",
            states.len()
        )));
    }

    let t_maps: Vec<DMatrix<f64>> = states.iter().map(|x| retraction.tangent_map(x)).collect();

    // Prior block.
    let p0 = log(&problem.prior.mean().inverse().compose(&states[0])).map_err(|e| {
        SmootherError::LinearizationFailure {
            index: 0,
            source: e,
        }
    })?;
    let j0_inv = right_jacobian_inverse(&p0);
    let e_tilde = &j0_inv * problem.prior.basis();
    let u = orth(problem.prior.basis());
    let drift = off_span_norm(&u, p0.vector());
    // The prior Jacobian must keep the subspace invariant whenever the
    // residual itself lies in it; this certifies the bracket-closure
    // assumption instead of trusting it.
    if drift <= 1e-9 * (1.0 + p0.norm()) {
        for j in 0..e_tilde.ncols() {
            let col = e_tilde.column(j).into_owned();
            let resid = off_span_norm(&u, &col);
            if resid > 1e-9 * col.norm().max(1.0) {
                return Err(SmootherError::SubalgebraViolation { residual: resid });
            }
        }
    }
    let t0_inv = t_maps[0].transpose();
    let prior_basis = &t0_inv * e_tilde;

    let mut b = DVector::zeros(n_states * q);
    b.rows_mut(0, q).copy_from(&(-(&t0_inv * p0.vector())));

    // Propagation blocks.
    let mut f_mats = Vec::with_capacity(problem.steps.len());
    let mut q_blocks = Vec::with_capacity(problem.steps.len());
    for (i, s) in problem.steps.iter().enumerate() {
        let pred = s.step(&states[i])?;
        let a_i = log(&pred.inverse().compose(&states[i + 1])).map_err(|e| {
            SmootherError::LinearizationFailure {
                index: i + 1,
                source: e,
            }
        })?;
        let t_next_inv = t_maps[i + 1].transpose();
        b.rows_mut((i + 1) * q, q)
            .copy_from(&(-(&t_next_inv * a_i.vector())));
        f_mats.push(retraction.step_jacobian(s, &states[i], &states[i + 1]));
        q_blocks.push(match s.q_cov() {
            ProcessNoise::Zero => ProcessNoise::Zero,
            ProcessNoise::Cov(qm) => ProcessNoise::Cov(&t_next_inv * qm * t_next_inv.transpose()),
        });
    }

    // Measurement blocks, zero-padded implicitly by carrying the index.
    let mut measurements = Vec::with_capacity(problem.measurements.len());
    for m in &problem.measurements {
        let t = m.time_index;
        let jac = m.model.jacobian(&states[t]) * &t_maps[t];
        let residual = m.model.residual(&m.value, &states[t]);
        measurements.push(LinearizedMeasurement {
            state_index: t,
            jacobian: jac,
            residual,
            noise_cov: m.noise_cov.clone(),
        });
    }

    Ok(LinearizedSystem {
        group,
        n_states,
        prior_basis,
        prior_coeff_cov: problem.prior.coeff_cov().clone(),
        b,
        f_mats,
        q_blocks,
        measurements,
        prior_subspace_drift: drift,
    })
}
