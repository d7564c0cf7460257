//! Group-affine transition engine.
//!
//! A transition is `x -> Gamma * Phi(x) * Upsilon` with `Phi` an automorphism.
//! Such maps propagate left-invariant errors exactly through the linear map
//! `F = Ad_{Upsilon^-1} * M` (log-linear property), which is what the whole
//! smoother builds on: it is an exact identity, not a first-order expansion.

use crate::lie::{
    adjoint, exp, log, Automorphism, GroupElement, GroupId, LieError, TangentVector,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    GroupMismatch { expected: GroupId, actual: GroupId },
    /// q_cov must be symmetric positive semidefinite.
    InvalidNoise(String),
    EmptyWindow,
    /// The automorphism family is not closed under composition, or the
    /// runtime closure check failed.
    NonComposable(String),
    /// The propagated subspace basis lost column rank.
    RankCollapse { min_singular: f64, scale: f64 },
    InvalidSubspace(String),
    Lie(LieError),
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::GroupMismatch { expected, actual } => {
                write!(f, "group mismatch: expected {expected}, got {actual}")
            }
            DynamicsError::InvalidNoise(msg) => write!(f, "invalid process noise: {msg}"),
            DynamicsError::EmptyWindow => write!(f, "cannot preintegrate an empty window"),
            DynamicsError::NonComposable(msg) => write!(f, "steps are not composable: {msg}"),
            DynamicsError::RankCollapse {
                min_singular,
                scale,
            } => write!(
                f,
                "subspace basis rank collapsed (sigma_min {min_singular:.3e} vs scale {scale:.3e})"
            ),
            DynamicsError::InvalidSubspace(msg) => write!(f, "invalid subspace: {msg}"),
            DynamicsError::Lie(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DynamicsError {}

impl From<LieError> for DynamicsError {
    fn from(e: LieError) -> Self {
        DynamicsError::Lie(e)
    }
}

/// Process noise of one step, on the tangent at Upsilon (the noisy input
/// enters as `Upsilon * exp(w)`). `Zero` marks exactly deterministic steps,
/// which the solver treats as hard constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessNoise {
    Zero,
    Cov(DMatrix<f64>),
}

impl ProcessNoise {
    pub fn is_zero(&self) -> bool {
        matches!(self, ProcessNoise::Zero)
    }

    /// Dense matrix view (zeros for `Zero`).
    pub fn to_matrix(&self, q: usize) -> DMatrix<f64> {
        match self {
            ProcessNoise::Zero => DMatrix::zeros(q, q),
            ProcessNoise::Cov(m) => m.clone(),
        }
    }

    fn validate(&self, q: usize) -> Result<(), DynamicsError> {
        if let ProcessNoise::Cov(m) = self {
            if m.nrows() != q || m.ncols() != q {
                return Err(DynamicsError::InvalidNoise(format!(
                    "expected {q}x{q}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-9 {
                return Err(DynamicsError::InvalidNoise(format!(
                    "not symmetric (residual {asym:.3e})"
                )));
            }
            let eig = m.clone().symmetric_eigenvalues();
            let min = eig.min();
            if min < -1e-12 {
                return Err(DynamicsError::InvalidNoise(format!(
                    "negative eigenvalue {min:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// One group-affine transition `x -> gamma * phi(x) * upsilon` together with
/// its process noise and duration.
#[derive(Debug, Clone)]
pub struct GroupAffineStep {
    gamma: GroupElement,
    phi: Automorphism,
    upsilon: GroupElement,
    q_cov: ProcessNoise,
    dt: f64,
}

impl GroupAffineStep {
    pub fn new(
        gamma: GroupElement,
        phi: Automorphism,
        upsilon: GroupElement,
        q_cov: ProcessNoise,
        dt: f64,
    ) -> Result<Self, DynamicsError> {
        let group = gamma.group();
        if upsilon.group() != group {
            return Err(DynamicsError::GroupMismatch {
                expected: group,
                actual: upsilon.group(),
            });
        }
        // Surface unsupported (group, automorphism) pairs at construction.
        phi.matrix(group)?;
        q_cov.validate(group.tangent_dim())?;
        Ok(GroupAffineStep {
            gamma,
            phi,
            upsilon,
            q_cov,
            dt,
        })
    }

    /// Identity transition on `group`.
    pub fn identity(group: GroupId) -> Self {
        GroupAffineStep {
            gamma: GroupElement::identity(group),
            phi: Automorphism::Identity,
            upsilon: GroupElement::identity(group),
            q_cov: ProcessNoise::Zero,
            dt: 0.0,
        }
    }

    pub fn group(&self) -> GroupId {
        self.gamma.group()
    }

    pub fn gamma(&self) -> &GroupElement {
        &self.gamma
    }

    pub fn phi(&self) -> &Automorphism {
        &self.phi
    }

    pub fn upsilon(&self) -> &GroupElement {
        &self.upsilon
    }

    pub fn q_cov(&self) -> &ProcessNoise {
        &self.q_cov
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Applies the transition to a state.
    pub fn step(&self, x: &GroupElement) -> Result<GroupElement, DynamicsError> {
        if x.group() != self.group() {
            return Err(DynamicsError::GroupMismatch {
                expected: self.group(),
                actual: x.group(),
            });
        }
        Ok(self
            .gamma
            .compose(&self.phi.apply(x)?)
            .compose(&self.upsilon))
    }

    /// Exact error propagation matrix `F = Ad_{Upsilon^-1} * M`.
    pub fn log_linear_matrix(&self) -> DMatrix<f64> {
        let m = self
            .phi
            .matrix(self.group())
            .expect("validated at construction");
        adjoint(&self.upsilon.inverse()) * m
    }

    /// First-order left-invariant covariance propagation `F P F^T + Q`.
    pub fn propagate_noise(&self, p_in: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.log_linear_matrix();
        let mut out = &f * p_in * f.transpose();
        if let ProcessNoise::Cov(q) = &self.q_cov {
            out += q;
        }
        out
    }

    /// Draws one realisation of the step: `Upsilon <- Upsilon * exp(w)` with
    /// `w ~ N(0, q_cov)`. The result carries zero noise (it is a sample).
    pub fn sample_noisy<R: Rng>(&self, rng: &mut R) -> GroupAffineStep {
        let upsilon = match &self.q_cov {
            ProcessNoise::Zero => self.upsilon.clone(),
            ProcessNoise::Cov(q) => {
                let w = sample_gaussian(q, rng);
                let w = TangentVector::new(self.group(), w).expect("dimension fixed by group");
                self.upsilon.compose(&exp(&w))
            }
        };
        GroupAffineStep {
            gamma: self.gamma.clone(),
            phi: self.phi.clone(),
            upsilon,
            q_cov: ProcessNoise::Zero,
            dt: self.dt,
        }
    }

    /// Copy of the step with a different noise model (used to re-attach the
    /// known covariance to a sampled realisation before estimation).
    pub fn with_noise(&self, q_cov: ProcessNoise) -> Result<GroupAffineStep, DynamicsError> {
        q_cov.validate(self.group().tangent_dim())?;
        Ok(GroupAffineStep {
            q_cov,
            ..self.clone()
        })
    }
}

/// Draws from N(0, cov) for PSD (possibly singular) `cov` via the symmetric
/// eigendecomposition.
fn sample_gaussian<R: Rng>(cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let q = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let mut out = DVector::zeros(q);
    for k in 0..q {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            out += eig.eigenvectors.column(k) * (lam.sqrt() * z);
        }
    }
    out
}

/// Composes a window of steps into a single equivalent step. The mean map is
/// composed exactly; the covariance follows the pairwise rule
/// `Q12 = F2 Q1 F2^T + Q2`, which reproduces sequential first-order
/// propagation.
pub fn preintegrate(steps: &[GroupAffineStep]) -> Result<GroupAffineStep, DynamicsError> {
    let first = steps.first().ok_or(DynamicsError::EmptyWindow)?;
    let mut acc = first.clone();
    for s in &steps[1..] {
        if s.group() != acc.group() {
            return Err(DynamicsError::GroupMismatch {
                expected: acc.group(),
                actual: s.group(),
            });
        }
        let phi = s.phi.compose_after(&acc.phi).ok_or_else(|| {
            DynamicsError::NonComposable("automorphism family not closed".into())
        })?;
        let gamma = s.gamma.compose(&s.phi.apply(&acc.gamma)?);
        let upsilon = s.phi.apply(&acc.upsilon)?.compose(&s.upsilon);
        let f2 = s.log_linear_matrix();
        let q_cov = match (&acc.q_cov, &s.q_cov) {
            (ProcessNoise::Zero, ProcessNoise::Zero) => ProcessNoise::Zero,
            (q1, q2) => {
                let q = acc.group().tangent_dim();
                let mut m = match q1 {
                    ProcessNoise::Zero => DMatrix::zeros(q, q),
                    ProcessNoise::Cov(m1) => &f2 * m1 * f2.transpose(),
                };
                if let ProcessNoise::Cov(m2) = q2 {
                    m += m2;
                }
                ProcessNoise::Cov(m)
            }
        };
        acc = GroupAffineStep {
            gamma,
            phi,
            upsilon,
            q_cov,
            dt: acc.dt + s.dt,
        };
    }
    // Runtime closure check: the composed map must reproduce the sequential
    // one on a probe state.
    let probe = exp(&TangentVector::from_slice(
        acc.group(),
        &probe_coords(acc.group()),
    )
    .expect("probe has tangent dimension"));
    let mut seq = probe.clone();
    for s in steps {
        seq = s.step(&seq)?;
    }
    let composed = acc.step(&probe)?;
    let resid = composed.distance(&seq);
    if resid > 1e-9 {
        return Err(DynamicsError::NonComposable(format!(
            "composed step disagrees with sequential stepping by {resid:.3e}"
        )));
    }
    Ok(acc)
}

fn probe_coords(group: GroupId) -> Vec<f64> {
    (0..group.tangent_dim())
        .map(|i| 0.1 + 0.05 * i as f64)
        .collect()
}

/// The affine subspace of states reachable from a degenerate prior under
/// deterministic group-affine dynamics: `{anchor * exp(sum a_j basis_j)}`.
#[derive(Debug, Clone)]
pub struct ReachableSubspace {
    anchor: GroupElement,
    basis: DMatrix<f64>,
}

impl ReachableSubspace {
    pub fn new(anchor: GroupElement, basis: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let q = anchor.group().tangent_dim();
        if basis.nrows() != q || basis.ncols() == 0 || basis.ncols() > q {
            return Err(DynamicsError::InvalidSubspace(format!(
                "basis must be {q}xp with 1 <= p <= {q}, got {}x{}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        check_rank(&basis)?;
        Ok(ReachableSubspace { anchor, basis })
    }

    pub fn anchor(&self) -> &GroupElement {
        &self.anchor
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// A point of the subspace for given coefficients.
    pub fn point(&self, coeffs: &DVector<f64>) -> GroupElement {
        let xi = TangentVector::new(self.anchor.group(), &self.basis * coeffs)
            .expect("basis rows match tangent dimension");
        self.anchor.compose(&exp(&xi))
    }
}

fn check_rank(basis: &DMatrix<f64>) -> Result<(), DynamicsError> {
    let svd = basis.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 1e-10 * max {
        return Err(DynamicsError::RankCollapse {
            min_singular: min,
            scale: max,
        });
    }
    Ok(())
}

/// Pushes a reachable subspace through one step: the anchor moves by the
/// transition and the basis by its log-linear matrix.
pub fn propagate_subspace(
    s: &GroupAffineStep,
    r: &ReachableSubspace,
) -> Result<ReachableSubspace, DynamicsError> {
    let anchor = s.step(&r.anchor)?;
    let basis = s.log_linear_matrix() * &r.basis;
    check_rank(&basis)?;
    Ok(ReachableSubspace { anchor, basis })
}

/// Dynamics residual `log(f(x_i)^-1 * x_{i+1})` of a consecutive state pair.
pub fn dynamics_residual(
    s: &GroupAffineStep,
    x_i: &GroupElement,
    x_next: &GroupElement,
) -> Result<TangentVector, DynamicsError> {
    let pred = s.step(x_i)?;
    Ok(log(&pred.inverse().compose(x_next))?)
}
