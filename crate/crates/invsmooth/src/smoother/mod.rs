//! Batch and sliding-window Gauss-Newton smoothing on factor chains.
//!
//! The chain consists of a (possibly rank-deficient) prior on the first
//! state, group-affine transitions with PSD or exactly-zero process noise,
//! and unary measurements. The linearised subproblem is solved in closed
//! form without ever inverting the prior or the process noise blocks, so
//! deterministic transitions behave as hard constraints.

mod linearize;
mod marginalize;
mod retraction;
mod solve;

pub use linearize::{linearize, LinearizedMeasurement, LinearizedSystem};
pub use marginalize::marginalize_oldest;
pub use retraction::{
    retraction_by_name, retraction_registry, ForsterSplitRetraction, GtsamLinearRetraction,
    InvariantRetraction, Retraction, RetractionKind,
};
pub use solve::{solve_chain_detailed, solve_degenerate_chain, SolveOutput};

use crate::dynamics::{dynamics_residual, DynamicsError, GroupAffineStep};
use crate::lie::{bracket, GroupElement, GroupId, LieError, TangentVector};
use nalgebra::{DMatrix, DVector};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum SmootherError {
    /// A dynamics or prior residual hit the logarithm cut locus.
    LinearizationFailure { index: usize, source: LieError },
    /// The innovation matrix is numerically singular (condition > 1e12).
    SingularInnovation { cond: f64 },
    ChainTooShort,
    /// The prior basis does not close under the Lie bracket, or its image
    /// under the prior Jacobian left the subspace.
    SubalgebraViolation { residual: f64 },
    InvalidProblem(String),
    Dynamics(DynamicsError),
    Lie(LieError),
}

impl fmt::Display for SmootherError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmootherError::LinearizationFailure { index, source } => {
                write!(f, "linearisation failed at state {index}: {source}")
            }
            SmootherError::SingularInnovation { cond } => {
                write!(f, "innovation matrix is singular (condition {cond:.3e})")
            }
            SmootherError::ChainTooShort => write!(f, "chain too short to marginalise"),
            SmootherError::SubalgebraViolation { residual } => {
                write!(f, "prior subspace is not bracket-closed (residual {residual:.3e})")
            }
            SmootherError::InvalidProblem(msg) => write!(f, "invalid problem: {msg}"),
            SmootherError::Dynamics(e) => write!(f, "{e}"),
            SmootherError::Lie(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for SmootherError {}

impl From<DynamicsError> for SmootherError {
    fn from(e: DynamicsError) -> Self {
        SmootherError::Dynamics(e)
    }
}

impl From<LieError> for SmootherError {
    fn from(e: LieError) -> Self {
        SmootherError::Lie(e)
    }
}

/// Gaussian prior on the first state whose tangent covariance may be
/// rank-deficient: `P0 = E S E^T` with `E` a q x p basis and `S` SPD.
/// The basis columns must span a Lie subalgebra; this is what keeps the
/// reachable set stable under the smoother updates.
#[derive(Debug, Clone)]
pub struct DegeneratePrior {
    mean: GroupElement,
    basis: DMatrix<f64>,
    coeff_cov: DMatrix<f64>,
}

/// Orthonormal basis of the column span (thin QR).
pub fn orth(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = basis.clone().qr();
    let q = qr.q();
    q.columns(0, basis.ncols().min(q.ncols())).into_owned()
}

/// Norm of the component of `v` orthogonal to the span of `u` (orthonormal).
pub(crate) fn off_span_norm(u: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v - u * (u.transpose() * v)).norm()
}

impl DegeneratePrior {
    pub fn new(
        mean: GroupElement,
        basis: DMatrix<f64>,
        coeff_cov: DMatrix<f64>,
    ) -> Result<Self, SmootherError> {
        let group = mean.group();
        let q = group.tangent_dim();
        let p = basis.ncols();
        if basis.nrows() != q || p == 0 || p > q {
            return Err(SmootherError::InvalidProblem(format!(
                "prior basis must be {q}xp with 1 <= p <= {q}, got {}x{}",
                basis.nrows(),
                p
            )));
        }
        let svd = basis.clone().svd(false, false);
        if svd.singular_values.min() <= 1e-10 * svd.singular_values.max() {
            return Err(SmootherError::InvalidProblem(
                "prior basis is rank-deficient".into(),
            ));
        }
        if coeff_cov.nrows() != p || coeff_cov.ncols() != p {
            return Err(SmootherError::InvalidProblem(format!(
                "coefficient covariance must be {p}x{p}"
            )));
        }
        if (coeff_cov.transpose() - &coeff_cov).amax() > 1e-9 {
            return Err(SmootherError::InvalidProblem(
                "coefficient covariance is not symmetric".into(),
            ));
        }
        if coeff_cov.clone().symmetric_eigenvalues().min() <= 0.0 {
            return Err(SmootherError::InvalidProblem(
                "coefficient covariance is not positive definite".into(),
            ));
        }
        // Bracket closure of the spanned subspace.
        let u = orth(&basis);
        for i in 0..p {
            for j in (i + 1)..p {
                let a = TangentVector::new(group, basis.column(i).into_owned())
                    .expect("basis rows match tangent dimension");
                let b = TangentVector::new(group, basis.column(j).into_owned())
                    .expect("basis rows match tangent dimension");
                let br = bracket(&a, &b).into_vector();
                let resid = off_span_norm(&u, &br);
                if resid > 1e-9 * br.norm().max(1.0) {
                    return Err(SmootherError::SubalgebraViolation { residual: resid });
                }
            }
        }
        Ok(DegeneratePrior {
            mean,
            basis,
            coeff_cov,
        })
    }

    /// Full-rank prior: `E = I`, `S` the dense SPD covariance.
    pub fn full_rank(mean: GroupElement, cov: DMatrix<f64>) -> Result<Self, SmootherError> {
        let q = mean.group().tangent_dim();
        Self::new(mean, DMatrix::identity(q, q), cov)
    }

    pub fn mean(&self) -> &GroupElement {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn coeff_cov(&self) -> &DMatrix<f64> {
        &self.coeff_cov
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Dense tangent covariance `E S E^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.basis * &self.coeff_cov * self.basis.transpose()
    }
}

/// Unary measurement models understood by the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementModelId {
    /// Observation of the position column (SE(2) and SE_2(3)).
    Position,
    /// Observation of the planar heading angle (SO(2) and SE(2)).
    Heading,
}

impl MeasurementModelId {
    pub fn supports(&self, group: GroupId) -> bool {
        match self {
            MeasurementModelId::Position => matches!(group, GroupId::SE2 | GroupId::SE23),
            MeasurementModelId::Heading => matches!(group, GroupId::SO2 | GroupId::SE2),
        }
    }

    pub fn dim(&self, group: GroupId) -> usize {
        match self {
            MeasurementModelId::Position => group.rotation_dim(),
            MeasurementModelId::Heading => 1,
        }
    }

    pub fn predict(&self, est: &GroupElement) -> DVector<f64> {
        match self {
            MeasurementModelId::Position => est
                .position()
                .expect("position model needs a group with a position column"),
            MeasurementModelId::Heading => {
                let r = est.rotation();
                DVector::from_column_slice(&[r[(1, 0)].atan2(r[(0, 0)])])
            }
        }
    }

    /// Jacobian of `h(est * exp(xi))` with respect to `xi` at zero.
    pub fn jacobian(&self, est: &GroupElement) -> DMatrix<f64> {
        let q = est.group().tangent_dim();
        match self {
            MeasurementModelId::Position => {
                let rot = est.rotation();
                let r = est.group().rotation_dim();
                let mut h = DMatrix::zeros(r, q);
                // The position slot of the tangent is mapped through the
                // current rotation estimate. The slot sits first in the
                // planar ordering (v1, v2, theta) and last in the extended
                // pose ordering (attitude, velocity, position).
                let col0 = match est.group() {
                    GroupId::SE2 => 0,
                    _ => q - r,
                };
                h.view_mut((0, col0), (r, r)).copy_from(&rot);
                h
            }
            MeasurementModelId::Heading => {
                let mut h = DMatrix::zeros(1, q);
                h[(0, q - 1)] = 1.0;
                h
            }
        }
    }

    /// Innovation `y - h(est)`, wrapped for angular observations.
    pub fn residual(&self, value: &DVector<f64>, est: &GroupElement) -> DVector<f64> {
        let mut r = value - self.predict(est);
        if matches!(self, MeasurementModelId::Heading) {
            r[0] = wrap_angle(r[0]);
        }
        r
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// One unary observation at a chain index.
#[derive(Debug, Clone)]
pub struct MeasurementFactor {
    pub time_index: usize,
    pub value: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
    pub model: MeasurementModelId,
}

impl MeasurementFactor {
    pub fn new(
        time_index: usize,
        value: DVector<f64>,
        noise_cov: DMatrix<f64>,
        model: MeasurementModelId,
    ) -> Result<Self, SmootherError> {
        let r = value.len();
        if noise_cov.nrows() != r || noise_cov.ncols() != r {
            return Err(SmootherError::InvalidProblem(format!(
                "noise covariance must be {r}x{r}"
            )));
        }
        if (noise_cov.transpose() - &noise_cov).amax() > 1e-9
            || noise_cov.clone().symmetric_eigenvalues().min() <= 0.0
        {
            return Err(SmootherError::InvalidProblem(
                "measurement noise must be symmetric positive definite".into(),
            ));
        }
        Ok(MeasurementFactor {
            time_index,
            value,
            noise_cov,
            model,
        })
    }
}

/// Prior + transition chain + sparse unary measurements.
#[derive(Debug, Clone)]
pub struct FactorChainProblem {
    pub prior: DegeneratePrior,
    pub steps: Vec<GroupAffineStep>,
    pub measurements: Vec<MeasurementFactor>,
}

impl FactorChainProblem {
    pub fn new(
        prior: DegeneratePrior,
        steps: Vec<GroupAffineStep>,
        measurements: Vec<MeasurementFactor>,
    ) -> Result<Self, SmootherError> {
        let group = prior.mean().group();
        for (i, s) in steps.iter().enumerate() {
            if s.group() != group {
                return Err(SmootherError::InvalidProblem(format!(
                    "step {i} is on {} but the prior is on {group}",
                    s.group()
                )));
            }
        }
        for (k, m) in measurements.iter().enumerate() {
            if m.time_index > steps.len() {
                return Err(SmootherError::InvalidProblem(format!(
                    "measurement {k} at index {} exceeds chain length {}",
                    m.time_index,
                    steps.len()
                )));
            }
            if !m.model.supports(group) {
                return Err(SmootherError::InvalidProblem(format!(
                    "measurement model {:?} does not support {group}",
                    m.model
                )));
            }
            if m.value.len() != m.model.dim(group) {
                return Err(SmootherError::InvalidProblem(format!(
                    "measurement {k} has dimension {}, model expects {}",
                    m.value.len(),
                    m.model.dim(group)
                )));
            }
        }
        Ok(FactorChainProblem {
            prior,
            steps,
            measurements,
        })
    }

    pub fn group(&self) -> GroupId {
        self.prior.mean().group()
    }

    pub fn n_states(&self) -> usize {
        self.steps.len() + 1
    }
}

/// Per-iteration diagnostics of the Gauss-Newton loop.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Polyline length of the position trajectory.
    pub trajectory_length: f64,
    /// max_i |log(f_i(x_i)^-1 x_{i+1})|.
    pub max_dynamics_residual: f64,
    /// Distance of the first state from the prior reachable subspace, in
    /// tangent coordinates at the prior mean.
    pub subspace_residual: f64,
    /// Linearised cost at the accepted update (finite part for degenerate
    /// blocks).
    pub linearized_cost: f64,
    /// Infinity norm of the accepted tangent update.
    pub step_norm: f64,
}

/// Smoothed trajectory plus diagnostics.
#[derive(Debug, Clone)]
pub struct TrajectoryEstimate {
    pub states: Vec<GroupElement>,
    pub iteration_log: Vec<IterationRecord>,
    pub covariances: Option<Vec<DMatrix<f64>>>,
    /// First iteration at which the linearised cost increased twice in a
    /// row, if that happened (reported, not fatal).
    pub non_decreasing_cost_at: Option<usize>,
    /// States after every iteration (entry 0 is the initial guess), kept
    /// when requested by the options.
    pub state_trace: Option<Vec<Vec<GroupElement>>>,
}

impl TrajectoryEstimate {
    pub fn from_states(states: Vec<GroupElement>) -> Self {
        TrajectoryEstimate {
            states,
            iteration_log: Vec::new(),
            covariances: None,
            non_decreasing_cost_at: None,
            state_trace: None,
        }
    }
}

/// Polyline length of the position part of a state sequence.
pub fn trajectory_length(states: &[GroupElement]) -> f64 {
    states
        .windows(2)
        .map(|w| match (w[0].position(), w[1].position()) {
            (Some(a), Some(b)) => (b - a).norm(),
            _ => 0.0,
        })
        .sum()
}

/// max_i |log(f_i(x_i)^-1 x_{i+1})| over the chain.
pub fn max_dynamics_residual(
    steps: &[GroupAffineStep],
    states: &[GroupElement],
) -> Result<f64, SmootherError> {
    let mut max = 0.0_f64;
    for (i, s) in steps.iter().enumerate() {
        let r = dynamics_residual(s, &states[i], &states[i + 1]).map_err(|e| match e {
            DynamicsError::Lie(le) => SmootherError::LinearizationFailure {
                index: i,
                source: le,
            },
            other => SmootherError::Dynamics(other),
        })?;
        max = max.max(r.norm());
    }
    Ok(max)
}

/// Off-subspace drift of the first state relative to the prior:
/// the component of `log(mean^-1 x0)` outside span(E).
pub fn prior_subspace_drift(
    prior: &DegeneratePrior,
    x0: &GroupElement,
) -> Result<f64, SmootherError> {
    let p0 = crate::lie::log(&prior.mean().inverse().compose(x0)).map_err(|e| {
        SmootherError::LinearizationFailure {
            index: 0,
            source: e,
        }
    })?;
    let u = orth(prior.basis());
    Ok(off_span_norm(&u, p0.vector()))
}

/// Options of the Gauss-Newton loop.
#[derive(Debug, Clone)]
pub struct GaussNewtonOpts {
    /// Stop when the update infinity norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Regenerate states 1..n by stepping from state 0 before iterating,
    /// which makes the initial guess dynamics-consistent.
    pub project_init: bool,
    /// Compute per-state marginal covariances at the final linearisation
    /// point.
    pub compute_covariances: bool,
    /// Record the states after every iteration.
    pub trace_states: bool,
}

impl Default for GaussNewtonOpts {
    fn default() -> Self {
        GaussNewtonOpts {
            tol: 1e-10,
            max_iters: 50,
            project_init: false,
            compute_covariances: false,
            trace_states: false,
        }
    }
}

/// Gauss-Newton: linearise, solve the chain in closed form, retract,
/// repeat until the update norm drops below tolerance.
pub fn gauss_newton(
    problem: &FactorChainProblem,
    init: TrajectoryEstimate,
    retraction: &dyn Retraction,
    opts: &GaussNewtonOpts,
) -> Result<TrajectoryEstimate, SmootherError> {
    let n_states = problem.n_states();
    if init.states.len() != n_states {
        return Err(SmootherError::InvalidProblem(format!(
            "initial estimate has {} states, chain needs {n_states}",
            init.states.len()
        )));
    }
    let mut states = init.states;
    if opts.project_init {
        for i in 0..problem.steps.len() {
            states[i + 1] = problem.steps[i].step(&states[i])?;
        }
    }

    let mut iteration_log = Vec::new();
    let mut non_decreasing_cost_at = None;
    let mut consecutive_increases = 0usize;
    let mut state_trace = opts.trace_states.then(|| vec![states.clone()]);

    for iter in 1..=opts.max_iters {
        let sys = linearize(problem, &states, retraction)?;
        if iter == 1 {
            iteration_log.push(IterationRecord {
                iteration: 0,
                trajectory_length: trajectory_length(&states),
                max_dynamics_residual: max_dynamics_residual(&problem.steps, &states)?,
                subspace_residual: prior_subspace_drift(&problem.prior, &states[0])?,
                linearized_cost: sys.cost_at_zero(),
                step_norm: f64::NAN,
            });
        }
        let out = solve_chain_detailed(&sys, false)?;
        let step_norm = out
            .xi
            .iter()
            .map(|v| v.vector().amax())
            .fold(0.0_f64, f64::max);
        for (i, xi) in out.xi.iter().enumerate() {
            states[i] = retraction.apply(&states[i], xi);
        }
        let prev_cost = iteration_log.last().map(|r| r.linearized_cost);
        if let Some(prev) = prev_cost {
            // Float-level jitter near convergence does not count as an
            // increase.
            if out.linearized_cost > prev * (1.0 + 1e-9) {
                consecutive_increases += 1;
                if consecutive_increases >= 2 && non_decreasing_cost_at.is_none() {
                    non_decreasing_cost_at = Some(iter);
                }
            } else {
                consecutive_increases = 0;
            }
        }
        iteration_log.push(IterationRecord {
            iteration: iter,
            trajectory_length: trajectory_length(&states),
            max_dynamics_residual: max_dynamics_residual(&problem.steps, &states)?,
            subspace_residual: prior_subspace_drift(&problem.prior, &states[0])?,
            linearized_cost: out.linearized_cost,
            step_norm,
        });
        if let Some(trace) = state_trace.as_mut() {
            trace.push(states.clone());
        }
        if step_norm < opts.tol {
            break;
        }
    }

    let covariances = if opts.compute_covariances {
        let sys = linearize(problem, &states, retraction)?;
        let out = solve_chain_detailed(&sys, true)?;
        out.covariances
    } else {
        None
    };

    Ok(TrajectoryEstimate {
        states,
        iteration_log,
        covariances,
        non_decreasing_cost_at,
        state_trace,
    })
}
