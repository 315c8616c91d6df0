//! Extended Kalman filter over `(x, y, psi)` fusing encoder/IMU dead
//! reckoning with pole, sidewall and RFID corrections.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SymmetricEigen, Vector2, Vector3};
use thiserror::Error;

use crate::world::{wrap_angle, Pose2D, WallLine};

/// Yaw rates below this use the straight-line limit of the arc model.
pub const STRAIGHT_YAW_RATE: f64 = 1e-6;
/// Minimum predicted range for a pole update.
pub const MIN_POLE_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizationError {
    #[error("pole coincides with the estimated position (range {0} m); update skipped")]
    CoincidentLandmark(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("unknown RFID tag {0}")]
    UnknownTag(u32),
    #[error("degenerate wall line")]
    DegenerateWall,
    #[error("non-positive time step {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Belief {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    /// How often the PSD guard had to repair the covariance.
    pub guard_activations: u32,
}

impl Belief {
    pub fn new(pose: Pose2D, cov: Matrix3<f64>) -> Self {
        Self { mean: Vector3::new(pose.x, pose.y, pose.psi), cov, guard_activations: 0 }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.mean.x, self.mean.y, self.mean.z)
    }

    /// Symmetric within 1e-12 and smallest eigenvalue at least -1e-10.
    pub fn is_psd(&self) -> bool {
        let asym = (self.cov - self.cov.transpose()).abs().max();
        asym <= 1e-12 && SymmetricEigen::new(self.cov).eigenvalues.min() >= -1e-10
    }
}

/// Process noise for [`predict`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessNoise {
    /// Fixed covariance added every step.
    Fixed(Matrix3<f64>),
    /// Speed and yaw-rate noise mapped through the motion model, plus a
    /// diagonal floor.
    Control { speed_fraction: f64, yaw_rate_sigma: f64, floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub process: ProcessNoise,
    pub r_pole: Matrix2<f64>,
    pub r_sidewall: Matrix2<f64>,
    pub r_rfid: Matrix2<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let deg = 1f64.to_radians();
        Self {
            process: ProcessNoise::Control { speed_fraction: 0.01, yaw_rate_sigma: 0.005, floor: 1e-10 },
            r_pole: Matrix2::from_diagonal(&Vector2::new(0.01, deg * deg)),
            r_sidewall: Matrix2::from_diagonal(&Vector2::new(0.005 * 0.005, deg * deg)),
            r_rfid: Matrix2::from_diagonal(&Vector2::new(0.05 * 0.05, 0.05 * 0.05)),
        }
    }
}

/// Arc motion model: new mean after `dt` at speed `u` and yaw rate `w`.
pub fn motion_model(mean: &Vector3<f64>, u: f64, w: f64, dt: f64) -> Vector3<f64> {
    let psi = mean.z;
    let (dx, dy) = if w.abs() < STRAIGHT_YAW_RATE {
        (u * dt * psi.cos(), u * dt * psi.sin())
    } else {
        let k = u / w;
        let psi2 = psi + w * dt;
        (-k * (psi.sin() - psi2.sin()), k * (psi.cos() - psi2.cos()))
    };
    Vector3::new(mean.x + dx, mean.y + dy, wrap_angle(psi + w * dt))
}

/// Jacobian of [`motion_model`] with respect to the state.
pub fn motion_jacobian(mean: &Vector3<f64>, u: f64, w: f64, dt: f64) -> Matrix3<f64> {
    let psi = mean.z;
    let (a, b) = if w.abs() < STRAIGHT_YAW_RATE {
        (-u * dt * psi.sin(), u * dt * psi.cos())
    } else {
        let k = u / w;
        let psi2 = psi + w * dt;
        (-k * (psi.cos() - psi2.cos()), k * (psi2.sin() - psi.sin()))
    };
    Matrix3::new(1.0, 0.0, a, 0.0, 1.0, b, 0.0, 0.0, 1.0)
}

/// Jacobian of [`motion_model`] with respect to `(u, w)`.
pub fn control_jacobian(mean: &Vector3<f64>, u: f64, w: f64, dt: f64) -> Matrix3x2<f64> {
    let psi = mean.z;
    let (s0, c0) = psi.sin_cos();
    if w.abs() < STRAIGHT_YAW_RATE {
        let h = u * dt * dt / 2.0;
        return Matrix3x2::new(dt * c0, -h * s0, dt * s0, h * c0, 0.0, dt);
    }
    let (s1, c1) = (psi + w * dt).sin_cos();
    let k = u / w;
    Matrix3x2::new(
        -(s0 - s1) / w,
        k / w * (s0 - s1) + k * dt * c1,
        (c0 - c1) / w,
        -k / w * (c0 - c1) + k * dt * s1,
        0.0,
        dt,
    )
}

fn guard(mut cov: Matrix3<f64>, activations: &mut u32) -> Matrix3<f64> {
    cov = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.min() < 0.0 {
        *activations += 1;
        let floored = eig.eigenvalues.map(|v| v.max(0.0));
        cov = eig.eigenvectors * Matrix3::from_diagonal(&floored) * eig.eigenvectors.transpose();
        cov = (cov + cov.transpose()) * 0.5;
    }
    cov
}

pub fn predict(b: &Belief, u_e: f64, psi_dot: f64, dt: f64, noise: &ProcessNoise) -> Result<Belief, LocalizationError> {
    if !(dt > 0.0) {
        return Err(LocalizationError::BadStep(dt));
    }
    let f = motion_jacobian(&b.mean, u_e, psi_dot, dt);
    let q = match *noise {
        ProcessNoise::Fixed(q) => q,
        ProcessNoise::Control { speed_fraction, yaw_rate_sigma, floor } => {
            let v = control_jacobian(&b.mean, u_e, psi_dot, dt);
            let m = Matrix2::new((speed_fraction * u_e).powi(2), 0.0, 0.0, yaw_rate_sigma.powi(2));
            v * m * v.transpose() + Matrix3::identity() * floor
        }
    };
    let mut out = *b;
    out.mean = motion_model(&b.mean, u_e, psi_dot, dt);
    out.cov = guard(f * b.cov * f.transpose() + q, &mut out.guard_activations);
    Ok(out)
}

/// Joseph-form EKF update. `angle_row` marks the innovation component that
/// is an angle and must be wrapped.
pub fn ekf_update(
    b: &Belief,
    z: &Vector2<f64>,
    h: &Vector2<f64>,
    jac: &Matrix2x3<f64>,
    r: &Matrix2<f64>,
    angle_row: Option<usize>,
) -> Result<Belief, LocalizationError> {
    let mut innovation = z - h;
    if let Some(i) = angle_row {
        innovation[i] = wrap_angle(innovation[i]);
    }
    let s = jac * b.cov * jac.transpose() + r;
    let s_inv = s.try_inverse().ok_or(LocalizationError::SingularInnovation)?;
    let k = b.cov * jac.transpose() * s_inv;
    let ikh = Matrix3::identity() - k * jac;
    let mut out = *b;
    out.mean = b.mean + k * innovation;
    out.mean.z = wrap_angle(out.mean.z);
    out.cov = guard(ikh * b.cov * ikh.transpose() + k * r * k.transpose(), &mut out.guard_activations);
    Ok(out)
}

pub fn pole_model(mean: &Vector3<f64>, mx: f64, my: f64) -> Result<(Vector2<f64>, Matrix2x3<f64>), LocalizationError> {
    let (dx, dy) = (mx - mean.x, my - mean.y);
    let q = dx * dx + dy * dy;
    let r = q.sqrt();
    if r < MIN_POLE_RANGE {
        return Err(LocalizationError::CoincidentLandmark(r));
    }
    let h = Vector2::new(r, wrap_angle(dy.atan2(dx) - mean.z));
    let jac = Matrix2x3::new(-dx / r, -dy / r, 0.0, dy / q, -dx / q, -1.0);
    Ok((h, jac))
}

pub fn update_pole(
    b: &Belief,
    range: f64,
    bearing: f64,
    mx: f64,
    my: f64,
    r_pole: &Matrix2<f64>,
) -> Result<Belief, LocalizationError> {
    let (h, jac) = pole_model(&b.mean, mx, my)?;
    ekf_update(b, &Vector2::new(range, bearing), &h, &jac, r_pole, Some(1))
}

pub fn sidewall_model(mean: &Vector3<f64>, wall: &WallLine) -> Result<(Vector2<f64>, Matrix2x3<f64>), LocalizationError> {
    if !wall.is_valid() {
        return Err(LocalizationError::DegenerateWall);
    }
    let n = wall.norm();
    let h = Vector2::new(wall.signed_distance(mean.x, mean.y), wrap_angle(wall.normal_angle() - mean.z));
    let jac = Matrix2x3::new(wall.b / n, wall.a / n, 0.0, 0.0, 0.0, -1.0);
    Ok((h, jac))
}

pub fn update_sidewall(
    b: &Belief,
    distance: f64,
    angle: f64,
    wall: &WallLine,
    r_sidewall: &Matrix2<f64>,
) -> Result<Belief, LocalizationError> {
    let (h, jac) = sidewall_model(&b.mean, wall)?;
    ekf_update(b, &Vector2::new(distance, angle), &h, &jac, r_sidewall, Some(1))
}

/// Form of the RFID measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RfidModel {
    /// `h = R(-psi)·m - p`: the absolute tag position rotated into the body
    /// frame, minus the vehicle position.
    #[default]
    Verbatim,
    /// Conventional world-to-body transform `h = R(-psi)·(m - p)`.
    BodyFrame,
}

pub fn rfid_model(mean: &Vector3<f64>, mx: f64, my: f64, model: RfidModel) -> (Vector2<f64>, Matrix2x3<f64>) {
    let (s, c) = mean.z.sin_cos();
    match model {
        RfidModel::Verbatim => {
            let h = Vector2::new(c * mx + s * my - mean.x, -s * mx + c * my - mean.y);
            let jac = Matrix2x3::new(-1.0, 0.0, -s * mx + c * my, 0.0, -1.0, -c * mx - s * my);
            (h, jac)
        }
        RfidModel::BodyFrame => {
            let (dx, dy) = (mx - mean.x, my - mean.y);
            let h = Vector2::new(c * dx + s * dy, -s * dx + c * dy);
            let jac = Matrix2x3::new(-c, -s, -s * dx + c * dy, s, -c, -c * dx - s * dy);
            (h, jac)
        }
    }
}

/// Measurement that corresponds to the tag sitting `ahead` metres in front
/// of the vehicle reference point on its longitudinal axis, evaluated with
/// the current heading estimate.
pub fn rfid_zone_measurement(mean: &Vector3<f64>, mx: f64, my: f64, ahead: f64, model: RfidModel) -> Vector2<f64> {
    match model {
        RfidModel::BodyFrame => Vector2::new(ahead, 0.0),
        RfidModel::Verbatim => {
            let (s, c) = mean.z.sin_cos();
            let (px, py) = (mx - ahead * c, my - ahead * s);
            Vector2::new(c * mx + s * my - px, -s * mx + c * my - py)
        }
    }
}

pub fn update_rfid(
    b: &Belief,
    z: &Vector2<f64>,
    mx: f64,
    my: f64,
    r_rfid: &Matrix2<f64>,
    model: RfidModel,
) -> Result<Belief, LocalizationError> {
    let (h, jac) = rfid_model(&b.mean, mx, my, model);
    ekf_update(b, z, &h, &jac, r_rfid, None)
}

/// Speed from rear encoder count deltas, averaged over the encoders given.
pub fn speed_estimate(delta_counts: &[f64], dt: f64, radius: f64, counts_per_rev: u32) -> f64 {
    if delta_counts.is_empty() || !(dt > 0.0) {
        return 0.0;
    }
    let mean = delta_counts.iter().sum::<f64>() / delta_counts.len() as f64;
    radius * TAU * mean / (f64::from(counts_per_rev) * dt)
}
