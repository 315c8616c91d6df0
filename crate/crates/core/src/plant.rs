//! Continuous-time vehicle dynamics.
//!
//! Three fidelity tiers share one 13-element state vector:
//!
//! * kinematic bicycle (pose driven directly by speed and steer angle),
//! * dynamic half-vehicle (lateral and yaw balance with lumped axle forces),
//! * four-wheel model with a 1-DOF roll spring-damper and per-wheel loads.
//!
//! Frame conventions: body `x` forward, `y` left, yaw counter-clockwise
//! positive. Roll is positive with the left side down, which is the sign the
//! roll balance below produces for a positive (leftward) lateral force sum.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use thiserror::Error;

use crate::world::{wrap_angle, Pose2D};

/// Gravity at Danish latitude.
pub const GRAVITY: f64 = 9.82;
/// Below this speed the dynamic tiers fall back to kinematic motion.
pub const STANDSTILL_SPEED: f64 = 0.01;
pub const ROLLOVER_ANGLE: f64 = FRAC_PI_4;
/// Upper validity bound of the lumped-axle models.
pub const MAX_MODEL_SPEED: f64 = 7.5;

pub const STATE_LEN: usize = 13;
pub type StateVector = [f64; STATE_LEN];

mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const PSI: usize = 2;
    pub const U: usize = 3;
    pub const V: usize = 4;
    pub const R: usize = 5;
    pub const ROLL: usize = 6;
    pub const ROLL_RATE: usize = 7;
    pub const DELTA: usize = 8;
    pub const WHEEL: usize = 9;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("centre of gravity at {a} m is not ahead of the rear axle (wheelbase {wheelbase} m)")]
    CgBeyondRearAxle { a: f64, wheelbase: f64 },
    #[error("tyre compression {compression} m reaches the nominal radius {nominal} m")]
    CompressionTooLarge { compression: f64, nominal: f64 },
    #[error("steer angle {0} rad is at the tan() singularity")]
    SteerSingularity(f64),
    #[error("half-vehicle tier needs forward speed > 0, got {0} m/s")]
    NonPositiveSpeed(f64),
    #[error("rollover: roll angle {roll} rad at t = {time} s")]
    Rollover { roll: f64, time: f64 },
    #[error("non-finite state derivative ({0})")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// Mass without load, kg.
    pub mass: f64,
    pub wheelbase: f64,
    /// Nominal CG-to-front-axle distance.
    pub cg_to_front: f64,
    pub track_width: f64,
    pub cg_height: f64,
    pub yaw_inertia: f64,
    pub roll_inertia: f64,
    pub roll_stiffness: f64,
    pub roll_damping: f64,
    pub cornering_front: f64,
    pub cornering_rear: f64,
    /// Unloaded effective wheel radius.
    pub wheel_radius: f64,
    pub friction: f64,
    pub steer_limit: f64,
    pub steer_rate_limit: f64,
    /// First-order steering lag, s. Zero applies commands directly.
    pub steer_lag: f64,
    /// First-order drive-speed lag, s. Zero applies commands directly.
    pub drive_lag: f64,
    /// Left/right vertical load shift per radian of roll, N/rad.
    pub roll_load_shift: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 350.0,
            wheelbase: 1.2,
            cg_to_front: 0.6,
            track_width: 0.9,
            cg_height: 0.5,
            yaw_inertia: 120.0,
            roll_inertia: 40.0,
            roll_stiffness: 20_000.0,
            roll_damping: 1_500.0,
            cornering_front: 8_000.0,
            cornering_rear: 10_000.0,
            wheel_radius: 0.3,
            friction: 0.7,
            steer_limit: 35f64.to_radians(),
            steer_rate_limit: 30f64.to_radians(),
            steer_lag: 0.1,
            drive_lag: 0.5,
            roll_load_shift: 2_000.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("wheelbase", self.wheelbase),
            ("cg_to_front", self.cg_to_front),
            ("track_width", self.track_width),
            ("cg_height", self.cg_height),
            ("yaw_inertia", self.yaw_inertia),
            ("roll_inertia", self.roll_inertia),
            ("roll_stiffness", self.roll_stiffness),
            ("roll_damping", self.roll_damping),
            ("cornering_front", self.cornering_front),
            ("cornering_rear", self.cornering_rear),
            ("wheel_radius", self.wheel_radius),
            ("steer_limit", self.steer_limit),
            ("steer_rate_limit", self.steer_rate_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PlantError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cg_to_front >= self.wheelbase {
            return Err(PlantError::InvalidParams("cg_to_front must be inside the wheelbase".into()));
        }
        if !(self.friction > 0.0 && self.friction <= 1.2) {
            return Err(PlantError::InvalidParams(format!("friction {} outside (0, 1.2]", self.friction)));
        }
        if self.steer_limit >= FRAC_PI_2 {
            return Err(PlantError::InvalidParams("steer_limit must be below pi/2".into()));
        }
        if self.steer_lag < 0.0 || self.drive_lag < 0.0 || self.roll_load_shift < 0.0 {
            return Err(PlantError::InvalidParams("lags and load shift must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadState {
    pub load_mass: f64,
    /// Backward CG shift from the nominal position.
    pub delta_cg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxleLoads {
    /// CG-to-front-axle distance.
    pub a: f64,
    /// CG-to-rear-axle distance.
    pub b: f64,
    pub total_mass: f64,
    pub front: f64,
    pub rear: f64,
}

/// Axle geometry and static normal forces for a given load.
pub fn load_distribution(p: &VehicleParams, load: &LoadState) -> Result<AxleLoads, PlantError> {
    if load.load_mass < 0.0 || load.delta_cg < 0.0 {
        return Err(PlantError::InvalidParams("load mass and CG shift must be non-negative".into()));
    }
    let a = p.cg_to_front + load.delta_cg;
    if a >= p.wheelbase {
        return Err(PlantError::CgBeyondRearAxle { a, wheelbase: p.wheelbase });
    }
    let b = p.wheelbase - a;
    let total_mass = p.mass + load.load_mass;
    let n_tot = total_mass * GRAVITY;
    let front = b / p.wheelbase * n_tot;
    Ok(AxleLoads { a, b, total_mass, front, rear: n_tot - front })
}

/// How tyre compression follows load.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressionModel {
    /// `(load_mass kg, compression m)` pairs, interpolated linearly and held
    /// constant outside the declared range.
    Table(Vec<(f64, f64)>),
    /// Compression proportional to the rear axle normal force, m/N.
    Linear { k: f64 },
}

impl Default for CompressionModel {
    fn default() -> Self {
        CompressionModel::Table(vec![(0.0, 0.0)])
    }
}

impl CompressionModel {
    /// Table model that goes from zero compression unloaded to `full` at `full_load` kg.
    pub fn linear_table(full_load: f64, full: f64) -> Self {
        CompressionModel::Table(vec![(0.0, 0.0), (full_load, full)])
    }

    pub fn compression(&self, p: &VehicleParams, load: &LoadState) -> Result<f64, PlantError> {
        match self {
            CompressionModel::Table(pairs) => Ok(interpolate(pairs, load.load_mass)),
            CompressionModel::Linear { k } => Ok(k * load_distribution(p, load)?.rear),
        }
    }
}

fn interpolate(pairs: &[(f64, f64)], x: f64) -> f64 {
    match pairs {
        [] => 0.0,
        [only] => only.1,
        _ => {
            if x <= pairs[0].0 {
                return pairs[0].1;
            }
            for w in pairs.windows(2) {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                if x <= x1 {
                    let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 1.0 };
                    return y0 + t * (y1 - y0);
                }
            }
            pairs[pairs.len() - 1].1
        }
    }
}

/// Loaded rolling radius of the rear wheels.
pub fn effective_wheel_radius(
    p: &VehicleParams,
    load: &LoadState,
    model: &CompressionModel,
) -> Result<f64, PlantError> {
    let compression = model.compression(p, load)?;
    if compression >= p.wheel_radius {
        return Err(PlantError::CompressionTooLarge { compression, nominal: p.wheel_radius });
    }
    Ok(p.wheel_radius - compression)
}

/// Pure kinematic bicycle: `(dx, dy, dpsi)`.
pub fn kinematic_derivative(pose: &Pose2D, u: f64, delta_f: f64, wheelbase: f64) -> Result<[f64; 3], PlantError> {
    if delta_f.abs() >= FRAC_PI_2 {
        return Err(PlantError::SteerSingularity(delta_f));
    }
    if !(wheelbase > 0.0) {
        return Err(PlantError::InvalidParams("wheelbase must be positive".into()));
    }
    let (s, c) = pose.psi.sin_cos();
    Ok([c * u, s * u, delta_f.tan() * u / wheelbase])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SteerAxle {
    #[default]
    Front,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantModel {
    #[default]
    Kinematic,
    HalfVehicle(SteerAxle),
    FourWheel,
}

/// Full plant state. Wheel angles are ordered left-front, right-front,
/// left-rear, right-rear.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub pose: Pose2D,
    pub u: f64,
    pub v: f64,
    pub yaw_rate: f64,
    pub roll: f64,
    pub roll_rate: f64,
    pub delta_f: f64,
    pub wheel_angle_travel: [f64; 4],
}

impl VehicleState {
    pub fn at_rest(pose: Pose2D) -> Self {
        Self { pose, ..Default::default() }
    }

    pub fn to_vector(&self) -> StateVector {
        let w = self.wheel_angle_travel;
        [
            self.pose.x, self.pose.y, self.pose.psi, self.u, self.v, self.yaw_rate, self.roll,
            self.roll_rate, self.delta_f, w[0], w[1], w[2], w[3],
        ]
    }

    pub fn from_vector(s: &StateVector) -> Self {
        Self {
            pose: Pose2D::new(s[idx::X], s[idx::Y], s[idx::PSI]),
            u: s[idx::U],
            v: s[idx::V],
            yaw_rate: s[idx::R],
            roll: s[idx::ROLL],
            roll_rate: s[idx::ROLL_RATE],
            delta_f: s[idx::DELTA],
            wheel_angle_travel: [s[9], s[10], s[11], s[12]],
        }
    }
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<const N: usize, F>(y: &[f64; N], dt: f64, mut f: F) -> Result<[f64; N], PlantError>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N], PlantError>,
{
    if !(dt > 0.0) {
        return Err(PlantError::BadStep(dt));
    }
    let axpy = |k: f64, d: &[f64; N]| -> [f64; N] {
        let mut out = *y;
        for i in 0..N {
            out[i] += k * d[i];
        }
        out
    };
    let k1 = f(y)?;
    let k2 = f(&axpy(dt / 2.0, &k1))?;
    let k3 = f(&axpy(dt / 2.0, &k2))?;
    let k4 = f(&axpy(dt, &k3))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFinite("rk4 result"));
    }
    Ok(out)
}

/// Controlled variables held constant over one integration interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuation {
    pub u_o: f64,
    pub delta_o: f64,
}

/// Lateral force and rates produced by the half-vehicle balance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralDynamics {
    pub v_dot: f64,
    pub yaw_accel: f64,
    pub front_force: f64,
    pub rear_force: f64,
}

fn saturate(force: f64, limit: f64) -> f64 {
    force.clamp(-limit, limit)
}

/// Half-vehicle lateral and yaw balance for the current state.
///
/// With `SteerAxle::Back` the steer angle acts on the rear slip angle and the
/// rear force is the one rotated into the body frame.
pub fn halfvehicle_derivative(
    state: &VehicleState,
    p: &VehicleParams,
    loads: &AxleLoads,
    steer_axle: SteerAxle,
) -> Result<LateralDynamics, PlantError> {
    let u = state.u;
    if !(u > 0.0) {
        return Err(PlantError::NonPositiveSpeed(u));
    }
    let (v, r, delta) = (state.v, state.yaw_rate, state.delta_f);
    let (a, b) = (loads.a, loads.b);
    let (steer_f, steer_r) = match steer_axle {
        SteerAxle::Front => (delta, 0.0),
        SteerAxle::Back => (0.0, delta),
    };
    let alpha_f = steer_f - (v + a * r) / u;
    let alpha_r = steer_r - (v - b * r) / u;
    let front_force = saturate(p.cornering_front * alpha_f, p.friction * loads.front);
    let rear_force = saturate(p.cornering_rear * alpha_r, p.friction * loads.rear);
    let (fy_f, fy_r) = (front_force * steer_f.cos(), rear_force * steer_r.cos());
    let v_dot = (fy_f + fy_r) / loads.total_mass - u * r;
    let yaw_accel = (a * fy_f - b * fy_r) / p.yaw_inertia;
    Ok(LateralDynamics { v_dot, yaw_accel, front_force, rear_force })
}

/// Per-wheel longitudinal forces in wheel frames, ordered lf, rf, lr, rr.
pub type WheelForces = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourWheelDynamics {
    pub u_dot: f64,
    pub v_dot: f64,
    pub yaw_accel: f64,
    pub roll_accel: f64,
    /// Body-frame lateral forces per wheel after rotation.
    pub lateral: [f64; 4],
    /// Body-frame longitudinal forces per wheel after rotation.
    pub longitudinal: [f64; 4],
    /// Vertical loads per wheel.
    pub normal: [f64; 4],
}

/// Rotates a wheel-frame force pair by the steer angle into the body frame.
pub fn rotate_tyre_force(delta: f64, fx_wheel: f64, fy_wheel: f64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    (c * fx_wheel - s * fy_wheel, s * fx_wheel + c * fy_wheel)
}

/// Four-wheel yaw, roll, longitudinal and lateral balance.
///
/// Left and right front wheels share the steer angle. Lateral tyre forces come
/// from the axle slip angle with half the axle cornering stiffness per wheel,
/// saturated at `mu` times each wheel's vertical load. At standstill the tyre
/// forces are zero.
pub fn fourwheel_derivative(
    state: &VehicleState,
    p: &VehicleParams,
    loads: &AxleLoads,
    delta_f: f64,
    wheel_forces: &WheelForces,
) -> Result<FourWheelDynamics, PlantError> {
    let m = loads.total_mass;
    let (a, b, u, v, r) = (loads.a, loads.b, state.u, state.v, state.yaw_rate);
    let shift = p.roll_load_shift * state.roll;
    let front_share = loads.front / (loads.front + loads.rear);
    // positive roll puts the left side down
    let normal = [
        (loads.front / 2.0 + shift * front_share).max(0.0),
        (loads.front / 2.0 - shift * front_share).max(0.0),
        (loads.rear / 2.0 + shift * (1.0 - front_share)).max(0.0),
        (loads.rear / 2.0 - shift * (1.0 - front_share)).max(0.0),
    ];
    let (alpha_f, alpha_r) = if u > STANDSTILL_SPEED {
        (delta_f - (v + a * r) / u, -(v - b * r) / u)
    } else {
        (0.0, 0.0)
    };
    let mut longitudinal = [0.0; 4];
    let mut lateral = [0.0; 4];
    for i in 0..4 {
        let front = i < 2;
        let (c_alpha, alpha) = if front {
            (p.cornering_front, alpha_f)
        } else {
            (p.cornering_rear, alpha_r)
        };
        let limit = p.friction * normal[i];
        let fy_w = saturate(c_alpha / 2.0 * alpha, limit);
        let fx_w = saturate(wheel_forces[i], limit);
        let (fx, fy) = if front { rotate_tyre_force(delta_f, fx_w, fy_w) } else { (fx_w, fy_w) };
        longitudinal[i] = fx;
        lateral[i] = fy;
    }
    let sum_fy: f64 = lateral.iter().sum();
    let sum_fx: f64 = longitudinal.iter().sum();
    let half_track = p.track_width / 2.0;
    let yaw_accel = (a * (lateral[0] + lateral[1]) - b * (lateral[2] + lateral[3])
        + half_track * (longitudinal[1] - longitudinal[0] + longitudinal[3] - longitudinal[2]))
        / p.yaw_inertia;
    let roll_accel = -(p.cg_height * sum_fy
        + (p.roll_stiffness - m * GRAVITY * p.cg_height) * state.roll
        + p.roll_damping * state.roll_rate)
        / p.roll_inertia;
    let u_dot = sum_fx / m + v * r;
    let v_dot = sum_fy / m - u * r - p.cg_height * roll_accel;
    Ok(FourWheelDynamics { u_dot, v_dot, yaw_accel, roll_accel, lateral, longitudinal, normal })
}

/// A vehicle plant bound to one parameter set, load and fidelity tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub params: VehicleParams,
    pub load: LoadState,
    pub model: PlantModel,
    pub loads: AxleLoads,
    /// True loaded radius of the rear wheels.
    pub rear_radius: f64,
}

impl Plant {
    pub fn new(
        params: VehicleParams,
        load: LoadState,
        model: PlantModel,
        compression: &CompressionModel,
    ) -> Result<Self, PlantError> {
        params.validate()?;
        let loads = load_distribution(&params, &load)?;
        let rear_radius = effective_wheel_radius(&params, &load, compression)?;
        Ok(Self { params, load, model, loads, rear_radius })
    }

    fn steer_rate(&self, delta: f64, command: f64) -> f64 {
        let p = &self.params;
        if p.steer_lag > 0.0 {
            let target = command.clamp(-p.steer_limit, p.steer_limit);
            ((target - delta) / p.steer_lag).clamp(-p.steer_rate_limit, p.steer_rate_limit)
        } else {
            0.0
        }
    }

    fn drive_rate(&self, u: f64, command: f64) -> f64 {
        if self.params.drive_lag > 0.0 {
            (command - u) / self.params.drive_lag
        } else {
            0.0
        }
    }

    /// Full state derivative under held actuation.
    pub fn derivative(&self, y: &StateVector, act: &Actuation) -> Result<StateVector, PlantError> {
        let p = &self.params;
        let s = VehicleState::from_vector(y);
        let mut d = [0.0; STATE_LEN];
        let (sin_psi, cos_psi) = y[idx::PSI].sin_cos();
        let (u, v) = (y[idx::U], y[idx::V]);
        d[idx::DELTA] = self.steer_rate(y[idx::DELTA], act.delta_o);
        let mut u_dot = self.drive_rate(u, act.u_o);

        let dynamic = !matches!(self.model, PlantModel::Kinematic) && u > STANDSTILL_SPEED;
        if dynamic {
            d[idx::X] = u * cos_psi - v * sin_psi;
            d[idx::Y] = u * sin_psi + v * cos_psi;
            d[idx::PSI] = y[idx::R];
            match self.model {
                PlantModel::HalfVehicle(axle) => {
                    let lat = halfvehicle_derivative(&s, p, &self.loads, axle)?;
                    d[idx::V] = lat.v_dot;
                    d[idx::R] = lat.yaw_accel;
                }
                PlantModel::FourWheel => {
                    let drive = self.loads.total_mass * u_dot / 2.0;
                    let fw = fourwheel_derivative(&s, p, &self.loads, y[idx::DELTA], &[0.0, 0.0, drive, drive])?;
                    u_dot = fw.u_dot;
                    d[idx::V] = fw.v_dot;
                    d[idx::R] = fw.yaw_accel;
                    d[idx::ROLL] = y[idx::ROLL_RATE];
                    d[idx::ROLL_RATE] = fw.roll_accel;
                }
                PlantModel::Kinematic => unreachable!(),
            }
        } else {
            let k = kinematic_derivative(&s.pose, u, y[idx::DELTA], p.wheelbase)?;
            d[idx::X] = k[0];
            d[idx::Y] = k[1];
            d[idx::PSI] = k[2];
            if !matches!(self.model, PlantModel::Kinematic) {
                // bleed off body slip and yaw rate while handed off
                let tau = p.drive_lag.max(0.05);
                d[idx::V] = -v / tau;
                d[idx::R] = (k[2] - y[idx::R]) / tau;
            }
            if matches!(self.model, PlantModel::FourWheel) {
                d[idx::ROLL] = y[idx::ROLL_RATE];
                d[idx::ROLL_RATE] = -((p.roll_stiffness - self.loads.total_mass * GRAVITY * p.cg_height) * y[idx::ROLL]
                    + p.roll_damping * y[idx::ROLL_RATE])
                    / p.roll_inertia;
            }
        }
        d[idx::U] = u_dot;

        let yaw_rate = d[idx::PSI];
        let half_track = p.track_width / 2.0;
        let front_radius = p.wheel_radius;
        d[idx::WHEEL] = (u - yaw_rate * half_track) / front_radius;
        d[idx::WHEEL + 1] = (u + yaw_rate * half_track) / front_radius;
        d[idx::WHEEL + 2] = (u - yaw_rate * half_track) / self.rear_radius;
        d[idx::WHEEL + 3] = (u + yaw_rate * half_track) / self.rear_radius;

        if d.iter().any(|x| !x.is_finite()) {
            return Err(PlantError::NonFinite("plant derivative"));
        }
        Ok(d)
    }

    /// Applies zero-lag actuators at the start of a hold interval.
    pub fn latch_actuation(&self, state: &mut VehicleState, act: &Actuation) {
        let p = &self.params;
        if p.steer_lag == 0.0 {
            state.delta_f = act.delta_o.clamp(-p.steer_limit, p.steer_limit);
        }
        if p.drive_lag == 0.0 {
            state.u = act.u_o;
        }
    }

    /// One RK4 step of length `dt` under held actuation. `time` is the
    /// simulation time at the end of the step and only labels faults.
    pub fn step(&self, state: &VehicleState, act: &Actuation, dt: f64, time: f64) -> Result<VehicleState, PlantError> {
        if act.u_o.abs() >= MAX_MODEL_SPEED {
            return Err(PlantError::InvalidParams(format!(
                "commanded speed {} m/s outside model validity",
                act.u_o
            )));
        }
        let y = state.to_vector();
        let mut next = rk4_step(&y, dt, |s| self.derivative(s, act))?;
        next[idx::PSI] = wrap_angle(next[idx::PSI]);
        next[idx::DELTA] = next[idx::DELTA].clamp(-self.params.steer_limit, self.params.steer_limit);
        let mut out = VehicleState::from_vector(&next);
        if matches!(self.model, PlantModel::Kinematic) {
            out.yaw_rate = out.u * out.delta_f.tan() / self.params.wheelbase;
        }
        if out.roll.abs() > ROLLOVER_ANGLE {
            return Err(PlantError::Rollover { roll: out.roll, time });
        }
        Ok(out)
    }
}
