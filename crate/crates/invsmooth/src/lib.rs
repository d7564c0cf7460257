//! Invariant smoothing toolkit for localisation on matrix Lie groups.
//!
//! The crate is organised around a factor-chain smoother whose linearised
//! subproblem is solved in closed form even with exactly zero process noise
//! and a rank-deficient prior:
//!
//! - [`lie`]: exact kernels for SO(2), SE(2), SO(3), SE_2(3).
//! - [`dynamics`]: group-affine transitions, log-linear propagation,
//!   preintegration and reachable-subspace tracking.
//! - [`smoother`]: linearisation, the degenerate chain solver, retraction
//!   strategies and sliding-window marginalisation.
//! - [`models`]: the planar wheeled robot and the unbiased inertial
//!   navigation system.
//! - [`sim`]: ground-truth generation, sensor simulation and Monte Carlo
//!   orchestration.
//! - [`selftest`]: the runtime invariant suite behind `invsmooth selftest`.

pub mod dynamics;
pub mod lie;
pub mod models;
pub mod selftest;
pub mod sim;
pub mod smoother;
