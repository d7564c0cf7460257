//! Concrete problem instantiations: the planar wheeled robot with perfect
//! odometry and the unbiased strapdown INS, together with their GPS
//! measurement model.

use crate::dynamics::{DynamicsError, GroupAffineStep, ProcessNoise};
use crate::lie::{Automorphism, GroupElement, GroupId, TangentVector};
use crate::smoother::{DegeneratePrior, SmootherError};
use nalgebra::{DMatrix, DVector, Vector3};

/// Wheeled robot moving on a straight line at constant speed, with a known
/// initial position and a heading-only prior.
#[derive(Debug, Clone)]
pub struct Robot2dConfig {
    pub speed: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// GPS position noise covariance (2x2 SPD).
    pub gps_cov: DMatrix<f64>,
    /// Heading offset of the prior mean (and initial estimate) relative to
    /// the true heading.
    pub heading_error: f64,
    /// Standard deviation of the heading prior.
    pub heading_sigma: f64,
}

impl Default for Robot2dConfig {
    fn default() -> Self {
        Robot2dConfig {
            speed: 7.0,
            dt: 1.0,
            n_steps: 10,
            gps_cov: DMatrix::identity(2, 2),
            heading_error: -3.0 * std::f64::consts::FRAC_PI_4,
            heading_sigma: 3.0 * std::f64::consts::FRAC_PI_4,
        }
    }
}

impl Robot2dConfig {
    /// Heading-only degenerate prior centred on the (wrong) initial belief.
    pub fn prior(&self) -> Result<DegeneratePrior, SmootherError> {
        let mean = se2_pose(self.heading_error, 0.0, 0.0);
        DegeneratePrior::new(
            mean,
            DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
            DMatrix::from_element(1, 1, self.heading_sigma * self.heading_sigma),
        )
    }
}

/// SE(2) pose from heading and position.
pub fn se2_pose(theta: f64, x: f64, y: f64) -> GroupElement {
    let (s, c) = theta.sin_cos();
    let mat = DMatrix::from_row_slice(3, 3, &[c, -s, x, s, c, y, 0.0, 0.0, 1.0]);
    GroupElement::from_matrix(GroupId::SE2, mat).expect("rotation built from sincos")
}

/// One noise-free odometry step of the planar robot: the body-frame
/// displacement `u = speed * dt * (1, 0)` is applied on the right.
pub fn robot2d_step(cfg: &Robot2dConfig) -> GroupAffineStep {
    let u = [cfg.speed * cfg.dt, 0.0];
    let mut ups = DMatrix::identity(3, 3);
    ups[(0, 2)] = u[0];
    ups[(1, 2)] = u[1];
    GroupAffineStep::new(
        GroupElement::identity(GroupId::SE2),
        Automorphism::Identity,
        GroupElement::from_matrix(GroupId::SE2, ups).expect("translation element"),
        ProcessNoise::Zero,
        cfg.dt,
    )
    .expect("matching groups by construction")
}

/// Unbiased INS configuration. Angular quantities are stored in SI units;
/// the constructors below convert from the conventional degree-based
/// sensor specifications.
#[derive(Debug, Clone)]
pub struct InsConfig {
    pub imu_rate: f64,
    pub gps_rate: f64,
    pub gravity: Vector3<f64>,
    /// Gyro noise, rad/s.
    pub sigma_g: f64,
    /// Accelerometer noise, m/s^2.
    pub sigma_a: f64,
    /// GPS noise, m.
    pub sigma_n: f64,
    /// Initial position std, m (zero: position known exactly).
    pub sigma_p0: f64,
    /// Initial velocity std, m/s.
    pub sigma_v0: f64,
    /// Initial yaw std, rad.
    pub sigma_r0: f64,
    pub window_size: usize,
    /// Initial heading error of the estimate, rad.
    pub heading_error: f64,
    /// Stationary phase duration, s.
    pub still_duration: f64,
    /// Moving phase duration, s.
    pub motion_duration: f64,
    /// Cruise speed reached after the start-of-motion ramp, m/s.
    pub cruise_speed: f64,
}

impl Default for InsConfig {
    fn default() -> Self {
        InsConfig {
            imu_rate: 200.0,
            gps_rate: 1.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            sigma_g: 2.7e-4_f64.to_radians(),
            sigma_a: 1.5e-3,
            sigma_n: 3.0,
            sigma_p0: 0.0,
            sigma_v0: 10.0,
            sigma_r0: 100.0_f64.to_radians(),
            window_size: 50,
            heading_error: 80.0_f64.to_radians(),
            still_duration: 15.0,
            motion_duration: 25.0,
            cruise_speed: 10.0,
        }
    }
}

impl InsConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.imu_rate <= 0.0 || self.gps_rate <= 0.0 {
            return Err(DynamicsError::InvalidNoise("rates must be positive".into()));
        }
        let ratio = self.imu_rate / self.gps_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(DynamicsError::InvalidNoise(
                "imu_rate must be divisible by gps_rate".into(),
            ));
        }
        Ok(())
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    /// IMU samples per GPS interval.
    pub fn samples_per_gps(&self) -> usize {
        (self.imu_rate / self.gps_rate).round() as usize
    }

    /// Yaw + velocity degenerate prior at the given mean. Roll, pitch and
    /// position are treated as exactly known at initialisation; the yaw
    /// and velocity generators span a Lie subalgebra.
    pub fn prior(&self, mean: GroupElement) -> Result<DegeneratePrior, SmootherError> {
        let mut basis = DMatrix::zeros(9, 4);
        basis[(2, 0)] = 1.0; // yaw
        basis[(3, 1)] = 1.0;
        basis[(4, 2)] = 1.0;
        basis[(5, 3)] = 1.0;
        let mut s = DMatrix::zeros(4, 4);
        s[(0, 0)] = self.sigma_r0 * self.sigma_r0;
        for k in 1..4 {
            s[(k, k)] = self.sigma_v0 * self.sigma_v0;
        }
        DegeneratePrior::new(mean, basis, s)
    }
}

/// SE_2(3) extended pose from rotation, velocity and position.
pub fn se23_state(
    rot: &DMatrix<f64>,
    vel: &Vector3<f64>,
    pos: &Vector3<f64>,
) -> GroupElement {
    let mut mat = DMatrix::identity(5, 5);
    mat.view_mut((0, 0), (3, 3)).copy_from(rot);
    for i in 0..3 {
        mat[(i, 3)] = vel[i];
        mat[(i, 4)] = pos[i];
    }
    GroupElement::from_matrix(GroupId::SE23, mat).expect("rotation block orthogonal")
}

/// One strapdown transition for gyro/accelerometer readings over `dt`:
/// `R <- R exp(dt w)`, `v <- v + dt (R a + g)`, `x <- x + dt v`, with the
/// process noise `diag(sigma_g^2 I, sigma_a^2 I, 0) * dt` on the tangent of
/// the input element.
pub fn ins_step(
    omega: &Vector3<f64>,
    accel: &Vector3<f64>,
    dt: f64,
    gravity: &Vector3<f64>,
    sigma_g: f64,
    sigma_a: f64,
) -> GroupAffineStep {
    assert!(dt > 0.0, "ins_step needs dt > 0");
    let mut gamma = DMatrix::identity(5, 5);
    for i in 0..3 {
        gamma[(i, 3)] = dt * gravity[i];
    }
    let rot = crate::lie::exp(
        &TangentVector::from_slice(GroupId::SO3, &[omega.x * dt, omega.y * dt, omega.z * dt])
            .expect("so3 tangent"),
    );
    let mut ups = DMatrix::identity(5, 5);
    ups.view_mut((0, 0), (3, 3)).copy_from(rot.matrix());
    for i in 0..3 {
        ups[(i, 3)] = dt * accel[i];
    }
    let q_cov = if sigma_g == 0.0 && sigma_a == 0.0 {
        ProcessNoise::Zero
    } else {
        let mut q = DMatrix::zeros(9, 9);
        for i in 0..3 {
            q[(i, i)] = sigma_g * sigma_g * dt;
            q[(3 + i, 3 + i)] = sigma_a * sigma_a * dt;
        }
        ProcessNoise::Cov(q)
    };
    GroupAffineStep::new(
        GroupElement::from_matrix(GroupId::SE23, gamma).expect("gravity column element"),
        Automorphism::PositionShift { dt },
        GroupElement::from_matrix(GroupId::SE23, ups).expect("input element"),
        q_cov,
        dt,
    )
    .expect("matching groups by construction")
}

/// GPS position observation: predicted value and the Jacobian of
/// `h(est * exp(xi))` at zero, whose position block equals the rotation
/// estimate.
pub fn gps_measurement(est: &GroupElement) -> (DVector<f64>, DMatrix<f64>) {
    let model = crate::smoother::MeasurementModelId::Position;
    (model.predict(est), model.jacobian(est))
}

/// Yaw angle (rotation about the world z axis) of a 3D rotation matrix.
pub fn yaw_of(rot: &DMatrix<f64>) -> f64 {
    rot[(1, 0)].atan2(rot[(0, 0)])
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}
