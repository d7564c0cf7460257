//! Ground-truth generation, sensor simulation and Monte Carlo
//! orchestration for the two study scenarios.

use crate::dynamics::{preintegrate, DynamicsError, GroupAffineStep};
use crate::lie::{GroupElement, GroupId};
use crate::models::{
    ins_step, robot2d_step, se23_state, se2_pose, wrap_angle, yaw_of, InsConfig, Robot2dConfig,
};
use crate::smoother::{
    gauss_newton, marginalize_oldest, FactorChainProblem, GaussNewtonOpts, MeasurementFactor,
    MeasurementModelId, Retraction, RetractionKind, SmootherError, TrajectoryEstimate,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// IMU reading pair for one integration interval.
#[derive(Debug, Clone)]
pub struct ImuSample {
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Noise-free reference trajectory with its inputs and GPS schedule.
#[derive(Debug, Clone)]
pub struct ScenarioTruth {
    pub group: GroupId,
    /// One state per integration step boundary.
    pub states: Vec<GroupElement>,
    /// Ideal transitions (their q_cov is the model covariance used by the
    /// estimator; the mean map is noise-free).
    pub steps: Vec<GroupAffineStep>,
    /// Raw IMU signals behind `steps`, when the scenario is inertial.
    pub imu_inputs: Option<Vec<ImuSample>>,
    /// State indices at which a GPS fix arrives.
    pub gps_indices: Vec<usize>,
    /// Time stamp of every state.
    pub times: Vec<f64>,
}

impl ScenarioTruth {
    /// Residual of re-integrating the states through the noise-free steps.
    pub fn reintegration_residual(&self) -> Result<f64, DynamicsError> {
        let mut worst = 0.0_f64;
        for (i, s) in self.steps.iter().enumerate() {
            let pred = s.step(&self.states[i])?;
            worst = worst.max(pred.distance(&self.states[i + 1]));
        }
        Ok(worst)
    }

    pub fn gps_truth_position(&self, state_index: usize) -> DVector<f64> {
        self.states[state_index]
            .position()
            .expect("scenario states carry a position")
    }
}

/// Straight-line constant-speed planar truth starting at the origin with
/// zero heading; GPS positions fall on the true line at every step.
pub fn make_robot2d_truth(cfg: &Robot2dConfig) -> ScenarioTruth {
    let step = robot2d_step(cfg);
    let mut states = vec![se2_pose(0.0, 0.0, 0.0)];
    let mut times = vec![0.0];
    for i in 0..cfg.n_steps {
        states.push(step.step(states.last().unwrap()).expect("same group"));
        times.push((i + 1) as f64 * cfg.dt);
    }
    ScenarioTruth {
        group: GroupId::SE2,
        states,
        steps: vec![step; cfg.n_steps],
        imu_inputs: None,
        gps_indices: (1..=cfg.n_steps).collect(),
        times,
    }
}

/// Inertial alignment truth: stationary, then a one-GPS-interval linear
/// acceleration ramp to cruise speed, then constant velocity. Attitude
/// stays identity; the ideal accelerometer reads the specific force
/// `R^T (dv/dt - g)`.
pub fn make_ins_truth(cfg: &InsConfig) -> ScenarioTruth {
    let dt = cfg.imu_dt();
    let n_samples = ((cfg.still_duration + cfg.motion_duration) * cfg.imu_rate).round() as usize;
    let ramp_duration = 1.0 / cfg.gps_rate;
    let ramp_accel = cfg.cruise_speed / ramp_duration;

    let mut inputs = Vec::with_capacity(n_samples);
    let mut steps = Vec::with_capacity(n_samples);
    let mut states = Vec::with_capacity(n_samples + 1);
    let mut times = Vec::with_capacity(n_samples + 1);
    states.push(se23_state(
        &DMatrix::identity(3, 3),
        &Vector3::zeros(),
        &Vector3::zeros(),
    ));
    times.push(0.0);
    for k in 0..n_samples {
        let t = k as f64 * dt;
        let world_accel = if t >= cfg.still_duration && t < cfg.still_duration + ramp_duration {
            Vector3::new(ramp_accel, 0.0, 0.0)
        } else {
            Vector3::zeros()
        };
        // R = I throughout, so the body-frame specific force is a - g.
        let accel = world_accel - cfg.gravity;
        let omega = Vector3::zeros();
        let step = ins_step(&omega, &accel, dt, &cfg.gravity, cfg.sigma_g, cfg.sigma_a);
        states.push(step.step(states.last().unwrap()).expect("same group"));
        times.push((k + 1) as f64 * dt);
        inputs.push(ImuSample { omega, accel });
        steps.push(step);
    }
    let per_gps = cfg.samples_per_gps();
    let gps_indices = (1..=n_samples / per_gps).map(|k| k * per_gps).collect();
    ScenarioTruth {
        group: GroupId::SE23,
        states,
        steps,
        imu_inputs: Some(inputs),
        gps_indices,
        times,
    }
}

/// Draws from N(0, cov) through the symmetric eigendecomposition (cov may
/// be singular).
pub(crate) fn sample_from_cov<R: Rng>(cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let n = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let mut out = DVector::zeros(n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            out += eig.eigenvectors.column(k) * (lam.sqrt() * z);
        }
    }
    out
}

/// Fixed-lag smoother driving one scenario: append a preintegrated step
/// and its fix, run the configured number of Gauss-Newton iterations,
/// marginalise the oldest state once the window is full.
pub struct SlidingWindowRunner {
    pub problem: FactorChainProblem,
    pub estimate: TrajectoryEstimate,
    retraction: &'static dyn Retraction,
    window: usize,
    iters_per_update: usize,
}

impl SlidingWindowRunner {
    pub fn new(
        problem: FactorChainProblem,
        init: TrajectoryEstimate,
        retraction: &'static dyn Retraction,
        window: usize,
        iters_per_update: usize,
    ) -> Self {
        SlidingWindowRunner {
            problem,
            estimate: init,
            retraction,
            window,
            iters_per_update,
        }
    }

    pub fn on_update(
        &mut self,
        step: GroupAffineStep,
        value: DVector<f64>,
        noise_cov: DMatrix<f64>,
        model: MeasurementModelId,
    ) -> Result<(), SmootherError> {
        let predicted = step.step(self.estimate.states.last().expect("nonempty window"))?;
        self.problem.steps.push(step);
        self.estimate.states.push(predicted);
        self.problem.measurements.push(MeasurementFactor::new(
            self.problem.steps.len(),
            value,
            noise_cov,
            model,
        )?);
        let opts = GaussNewtonOpts {
            max_iters: self.iters_per_update,
            compute_covariances: true,
            project_init: false,
            ..Default::default()
        };
        self.estimate = gauss_newton(
            &self.problem,
            std::mem::replace(&mut self.estimate, TrajectoryEstimate::from_states(vec![])),
            self.retraction,
            &opts,
        )?;
        if self.estimate.states.len() > self.window {
            let (p, e) = marginalize_oldest(&self.problem, &self.estimate)?;
            // Marginalisation drops the covariances; keep the surviving
            // ones so the caller can still read the latest-state bound.
            let covs = self
                .estimate
                .covariances
                .as_ref()
                .map(|c| c[1..].to_vec());
            self.problem = p;
            self.estimate = e;
            self.estimate.covariances = covs;
        }
        Ok(())
    }

    pub fn last_state(&self) -> &GroupElement {
        self.estimate.states.last().expect("nonempty window")
    }

    pub fn last_covariance(&self) -> Option<&DMatrix<f64>> {
        self.estimate.covariances.as_ref().and_then(|c| c.last())
    }
}

/// Estimator selection for a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub retraction: RetractionKind,
    pub window: usize,
    pub iters_per_update: usize,
}

/// Aggregated alignment metrics over a set of Monte Carlo runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// GPS epoch times.
    pub times: Vec<f64>,
    /// Per-run, per-epoch signed yaw error in degrees.
    pub yaw_err_deg: Vec<Vec<f64>>,
    /// Per-run, per-epoch 3-sigma yaw bound in degrees.
    pub sigma3_deg: Vec<Vec<f64>>,
    /// Root-mean-square yaw error across runs, per epoch.
    pub rmse_deg: Vec<f64>,
    pub final_rmse_deg: f64,
    /// Runs whose final yaw error lies inside the final 3-sigma bound.
    pub runs_within_3sigma_at_end: usize,
    pub n_runs: usize,
    /// Mean over runs of the per-run peak |yaw error| over the whole run.
    /// While the vehicle stands still the yaw is unobservable, so this is
    /// dominated by the shared prior wander rather than the estimator.
    pub mean_peak_yaw_err_deg: f64,
    /// Mean over runs of the per-run peak |yaw error| during the
    /// convergence phase (from the second fix after motion onset onward),
    /// where the heading is observable and the strategies actually differ.
    pub mean_convergence_peak_deg: f64,
    /// RMS of the injected GPS noise samples (diagnostic).
    pub gps_noise_rms: f64,
}

/// Runs the in-motion alignment scenario `n_runs` times with independent
/// noise streams derived from `seed`, estimating with the given strategy.
/// The noise realisations depend only on (seed, run index), so different
/// strategies see identical data.
pub fn run_monte_carlo(
    truth: &ScenarioTruth,
    cfg: &InsConfig,
    est: &EstimatorConfig,
    n_runs: usize,
    seed: u64,
) -> Result<RunMetrics, SmootherError> {
    assert!(n_runs >= 1, "need at least one run");
    let per_gps = cfg.samples_per_gps();
    let times: Vec<f64> = truth.gps_indices.iter().map(|&i| truth.times[i]).collect();
    let mut yaw_err_deg = Vec::with_capacity(n_runs);
    let mut sigma3_deg = Vec::with_capacity(n_runs);
    let mut noise_sq_sum = 0.0;
    let mut noise_count = 0usize;

    for run in 0..n_runs {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(run as u64 + 1);

        // Sensor realisation: sampled inputs keep the model covariance for
        // the estimator, GPS fixes get white position noise.
        let noisy_steps: Vec<GroupAffineStep> = truth
            .steps
            .iter()
            .map(|s| {
                s.sample_noisy(&mut rng)
                    .with_noise(s.q_cov().clone())
                    .expect("covariance already validated")
            })
            .collect();
        let gps_values: Vec<DVector<f64>> = truth
            .gps_indices
            .iter()
            .map(|&i| {
                let mut noise = DVector::zeros(3);
                if cfg.sigma_n > 0.0 {
                    for k in 0..3 {
                        let z: f64 = rng.sample(StandardNormal);
                        noise[k] = cfg.sigma_n * z;
                    }
                }
                noise_sq_sum += noise.norm_squared();
                noise_count += noise.len();
                truth.gps_truth_position(i) + noise
            })
            .collect();

        // Initial belief: known position, zero velocity, correct roll and
        // pitch, heading off by the configured error.
        let yaw0 = yaw_of(&truth.states[0].rotation()) + cfg.heading_error;
        let rot0 = rotation_z(yaw0);
        let mean0 = se23_state(
            &rot0,
            &Vector3::zeros(),
            &vec_to_vector3(&truth.gps_truth_position(0)),
        );
        let prior = cfg.prior(mean0.clone())?;
        let problem = FactorChainProblem::new(prior, vec![], vec![])?;
        let init = TrajectoryEstimate::from_states(vec![mean0]);
        let mut runner = SlidingWindowRunner::new(
            problem,
            init,
            est.retraction.strategy(),
            est.window,
            est.iters_per_update,
        );

        let mut errs = Vec::with_capacity(truth.gps_indices.len());
        let mut sigmas = Vec::with_capacity(truth.gps_indices.len());
        for (e, &gps_idx) in truth.gps_indices.iter().enumerate() {
            let window = &noisy_steps[gps_idx - per_gps..gps_idx];
            let combined = preintegrate(window)?;
            // A zero configured GPS noise is floored at the millimetre
            // level: the factor covariance must stay SPD and the innovation
            // well conditioned.
            runner.on_update(
                combined,
                gps_values[e].clone(),
                DMatrix::identity(3, 3) * cfg.sigma_n.max(1e-3).powi(2),
                MeasurementModelId::Position,
            )?;
            let est_state = runner.last_state();
            let err = wrap_angle(
                yaw_of(&est_state.rotation()) - yaw_of(&truth.states[gps_idx].rotation()),
            )
            .to_degrees();
            let sigma = runner
                .last_covariance()
                .map(|p| yaw_sigma(p, &est_state.rotation()))
                .unwrap_or(f64::NAN);
            errs.push(err);
            sigmas.push(3.0 * sigma.to_degrees());
        }
        yaw_err_deg.push(errs);
        sigma3_deg.push(sigmas);
    }

    let n_epochs = times.len();
    let rmse_deg: Vec<f64> = (0..n_epochs)
        .map(|e| {
            let ms = yaw_err_deg.iter().map(|r| r[e] * r[e]).sum::<f64>() / n_runs as f64;
            ms.sqrt()
        })
        .collect();
    let final_rmse_deg = *rmse_deg.last().unwrap_or(&f64::NAN);
    let runs_within_3sigma_at_end = (0..n_runs)
        .filter(|&r| {
            let err = yaw_err_deg[r].last().copied().unwrap_or(f64::NAN);
            let bound = sigma3_deg[r].last().copied().unwrap_or(f64::NAN);
            err.abs() <= bound
        })
        .count();
    let mean_peak_yaw_err_deg = yaw_err_deg
        .iter()
        .map(|r| r.iter().fold(0.0_f64, |m, e| m.max(e.abs())))
        .sum::<f64>()
        / n_runs as f64;
    let t_convergence = cfg.still_duration + 2.0 / cfg.gps_rate;
    let mean_convergence_peak_deg = yaw_err_deg
        .iter()
        .map(|r| {
            times
                .iter()
                .zip(r)
                .filter(|(t, _)| **t >= t_convergence)
                .map(|(_, e)| e.abs())
                .fold(0.0_f64, f64::max)
        })
        .sum::<f64>()
        / n_runs as f64;
    let gps_noise_rms = if noise_count > 0 {
        (noise_sq_sum / noise_count as f64).sqrt()
    } else {
        0.0
    };

    Ok(RunMetrics {
        times,
        yaw_err_deg,
        sigma3_deg,
        rmse_deg,
        final_rmse_deg,
        runs_within_3sigma_at_end,
        n_runs,
        mean_peak_yaw_err_deg,
        mean_convergence_peak_deg,
        gps_noise_rms,
    })
}

/// Standard deviation of the yaw (world z) component of a left-invariant
/// attitude covariance block.
pub fn yaw_sigma(cov: &DMatrix<f64>, rot: &DMatrix<f64>) -> f64 {
    // Yaw error maps to e_z^T R phi for body-frame attitude error phi.
    let rz = rot.transpose() * DVector::from_column_slice(&[0.0, 0.0, 1.0]);
    let phi_block = cov.view((0, 0), (3, 3));
    (rz.transpose() * phi_block * rz)[(0, 0)].max(0.0).sqrt()
}

fn rotation_z(angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
}

fn vec_to_vector3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

/// Builds the batch estimation problem of the planar scenario: heading
/// prior, deterministic odometry chain and noisy GPS fixes drawn from the
/// seeded stream.
pub fn robot2d_problem(
    cfg: &Robot2dConfig,
    truth: &ScenarioTruth,
    seed: u64,
) -> Result<(FactorChainProblem, TrajectoryEstimate), SmootherError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let step = robot2d_step(cfg);
    let prior = cfg.prior()?;
    let measurements = truth
        .gps_indices
        .iter()
        .map(|&k| {
            let value = truth.gps_truth_position(k) + sample_from_cov(&cfg.gps_cov, &mut rng);
            MeasurementFactor::new(k, value, cfg.gps_cov.clone(), MeasurementModelId::Position)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let init = TrajectoryEstimate::from_states(vec![prior.mean().clone(); cfg.n_steps + 1]);
    let problem = FactorChainProblem::new(prior, vec![step; cfg.n_steps], measurements)?;
    Ok((problem, init))
}

/// Full-batch Gauss-Newton on the planar scenario with the given strategy.
pub fn run_robot2d_batch(
    cfg: &Robot2dConfig,
    kind: RetractionKind,
    seed: u64,
) -> Result<(TrajectoryEstimate, ScenarioTruth), SmootherError> {
    let truth = make_robot2d_truth(cfg);
    let (problem, init) = robot2d_problem(cfg, &truth, seed)?;
    let opts = GaussNewtonOpts {
        project_init: true,
        trace_states: true,
        ..Default::default()
    };
    let est = gauss_newton(&problem, init, kind.strategy(), &opts)?;
    Ok((est, truth))
}
