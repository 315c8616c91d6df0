//! Lock-step co-simulation of the discrete-event controller and the
//! continuous-time plant.
//!
//! Each controller period the engine samples the sensors, optionally runs the
//! EKF, steps the controller, then integrates the plant with the controls held
//! constant over a fixed number of RK4 micro-steps.

use nalgebra::{Matrix3, Vector3};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::calibration::{distance_from_counts, EncoderLog};
use crate::controller::{
    ControlOutput, Controller, ControllerError, FeedPlan, Monitored, Placement, TrackerConfig, TrackingMethod,
};
use crate::dse::DesignSpace;
use crate::localization::{
    predict, speed_estimate, update_pole, update_rfid, update_sidewall, Belief, NoiseConfig, RfidModel,
    rfid_zone_measurement,
};
use crate::plant::{
    Actuation, CompressionModel, LoadState, Plant, PlantError, PlantModel, VehicleParams, VehicleState,
};
use crate::sensors::{
    gaussian, stream_rng, vision_poles, vision_sidewall, Edge, EncoderModel, ImuModel, ReaderId, RfidReader,
    RfidReaderModel, Stream, TagEvent, VisionModel,
};
use crate::world::{validate_route, wrap_angle, xte, Landmark, LandmarkMap, Pose2D, RfidTag, Route, WallLine, Waypoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoSimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Which side of the co-simulation owns a contract variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Controller,
    Plant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractVariable {
    pub name: &'static str,
    pub unit: &'static str,
    pub writer: Side,
    pub reader: Side,
}

/// Controlled and monitored variables exchanged every period. Shared design
/// parameters are the scenario constants returned by [`Scenario::sdps`].
pub const CONTRACT: [ContractVariable; 6] = [
    ContractVariable { name: "u_o", unit: "m/s", writer: Side::Controller, reader: Side::Plant },
    ContractVariable { name: "delta_o", unit: "rad", writer: Side::Controller, reader: Side::Plant },
    ContractVariable { name: "x_s", unit: "m", writer: Side::Plant, reader: Side::Controller },
    ContractVariable { name: "y_s", unit: "m", writer: Side::Plant, reader: Side::Controller },
    ContractVariable { name: "psi_s", unit: "rad", writer: Side::Plant, reader: Side::Controller },
    ContractVariable { name: "psi_dot_s", unit: "rad/s", writer: Side::Plant, reader: Side::Controller },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoSimConfig {
    pub de_period: f64,
    pub ct_step: f64,
    pub duration_cap: f64,
    pub seed: u64,
}

impl Default for CoSimConfig {
    fn default() -> Self {
        Self { de_period: 0.02, ct_step: 0.001, duration_cap: 120.0, seed: 0 }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as usize)
}

impl CoSimConfig {
    pub fn validate(&self) -> Result<(), CoSimError> {
        let bad = |m: &str| Err(CoSimError::InvalidScenario(m.into()));
        if !(self.ct_step > 0.0 && self.de_period > 0.0) {
            return bad("time steps must be positive");
        }
        if self.ct_step > self.de_period {
            return bad("ct_step must not exceed de_period");
        }
        if integer_ratio(self.de_period, self.ct_step).is_none() {
            return bad("de_period must be an integer multiple of ct_step");
        }
        if !(self.duration_cap >= 0.0) {
            return bad("duration_cap must be non-negative");
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        integer_ratio(self.de_period, self.ct_step).unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSuite {
    pub encoder: EncoderModel,
    pub imu: ImuModel,
    pub vision: VisionModel,
    /// Vision frames are processed every this many seconds.
    pub vision_period: f64,
    /// Noise on the monitored position when the EKF is bypassed.
    pub position_sigma: f64,
    pub heading_sigma: f64,
    pub rfid_front: Option<RfidReaderModel>,
    pub rfid_rear: Option<RfidReaderModel>,
}

impl Default for SensorSuite {
    fn default() -> Self {
        Self {
            encoder: EncoderModel::default(),
            imu: ImuModel::default(),
            vision: VisionModel::default(),
            vision_period: 0.1,
            position_sigma: 0.0,
            heading_sigma: 0.0,
            rfid_front: None,
            rfid_rear: None,
        }
    }
}

/// Where the controller's monitored pose comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    /// True pose plus optional noise; no sensor fusion.
    #[default]
    GroundTruth,
    /// EKF belief mean.
    Ekf,
}

/// Wheel radius the controller assumes when converting encoder counts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub enum RadiusSource {
    /// Unloaded nominal radius.
    #[default]
    Nominal,
    Fixed(f64),
    /// Mean of the unloaded radius and the radius at `full_load` kg.
    Static { full_load: f64 },
    /// True loaded radius with a measurement error uniform within `accuracy`.
    PreCalibrated { accuracy: f64 },
    /// True loaded radius plus a constant estimator bias.
    Estimator { bias: f64 },
}


#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationConfig {
    pub wiring: Wiring,
    pub noise: NoiseConfig,
    pub rfid_model: RfidModel,
    pub radius: RadiusSource,
    /// Initial 1-sigma of (x, y, psi).
    pub initial_sigma: [f64; 3],
    pub use_poles: bool,
    pub use_sidewall: bool,
    pub use_rfid: bool,
    /// Seconds to wait for an Out edge before falling back to an In-edge update.
    pub rfid_out_timeout: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            wiring: Wiring::GroundTruth,
            noise: NoiseConfig::default(),
            rfid_model: RfidModel::Verbatim,
            radius: RadiusSource::Nominal,
            initial_sigma: [0.5, 0.5, 0.3],
            use_poles: true,
            use_sidewall: true,
            use_rfid: true,
            rfid_out_timeout: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub tracker: TrackerConfig,
    pub cruise_speed: f64,
    pub speed_cap: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { tracker: TrackerConfig::default(), cruise_speed: 1.0, speed_cap: 2.5 }
    }
}

/// Straight feeding area along a wall, generated from a handful of numbers.
///
/// The robot drives along the x axis; the wall runs parallel at `y =
/// wall_offset`. RFID tags lie on the path every `tag_spacing` metres from
/// `approach` on, and placements sit at cage centres between the first and
/// last tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedingLayout {
    pub wall_offset: f64,
    pub tag_spacing: f64,
    pub tag_intervals: usize,
    pub cage_pitch: f64,
    pub approach: f64,
    /// The robot stops this far before the first tag to deploy the arm.
    pub stop_before: f64,
    pub run_out: f64,
    pub grams: f64,
    pub half_tolerance: f64,
    pub feed_speed: f64,
    pub deploy_time: f64,
    /// Entrance posts either side of the path at the first tag.
    pub entrance_poles: bool,
    pub pole_half_gap: f64,
}

impl Default for FeedingLayout {
    fn default() -> Self {
        Self {
            wall_offset: 0.6,
            tag_spacing: 5.0,
            tag_intervals: 1,
            cage_pitch: 0.3,
            approach: 3.0,
            stop_before: 0.5,
            run_out: 2.0,
            grams: 150.0,
            half_tolerance: 0.08,
            feed_speed: 0.25,
            deploy_time: 5.0,
            entrance_poles: true,
            pole_half_gap: 1.2,
        }
    }
}

impl FeedingLayout {
    pub fn first_tag(&self) -> f64 {
        self.approach
    }

    pub fn last_tag(&self) -> f64 {
        self.approach + self.tag_spacing * self.tag_intervals as f64
    }

    pub fn wall(&self) -> WallLine {
        WallLine { a: 1.0, b: 0.0, c: -self.wall_offset }
    }

    pub fn route(&self) -> Route {
        Route::from_waypoints(&[Waypoint::new(0.0, 0.0), Waypoint::new(self.last_tag() + self.run_out, 0.0)])
    }

    pub fn map(&self) -> LandmarkMap {
        let tags = (0..=self.tag_intervals)
            .map(|i| RfidTag { id: i as u32 + 1, x: self.approach + self.tag_spacing * i as f64, y: 0.0 })
            .collect();
        let poles = if self.entrance_poles {
            vec![
                Landmark { x: self.approach, y: self.pole_half_gap },
                Landmark { x: self.approach, y: -self.pole_half_gap },
            ]
        } else {
            Vec::new()
        };
        LandmarkMap {
            poles,
            sidewall: Some(self.wall()),
            rfid_tags: tags,
            feed_zones: Vec::new(),
            tag_spacing: Some(self.tag_spacing),
        }
    }

    pub fn plan(&self) -> FeedPlan {
        let (start, end) = (self.first_tag(), self.last_tag());
        let placements = (0..)
            .map(|k| start + self.cage_pitch * (k as f64 + 0.5))
            .take_while(|p| *p < end)
            .map(|position| Placement { position, grams: self.grams })
            .collect();
        FeedPlan {
            placements,
            half_tolerance: self.half_tolerance,
            area_start: start - self.stop_before,
            area_end: end,
            feed_speed: self.feed_speed,
            deploy_time: self.deploy_time,
        }
    }

    /// Time budget that comfortably covers the whole pass.
    pub fn duration_cap(&self) -> f64 {
        (self.last_tag() + self.run_out) / self.feed_speed * 1.5 + self.deploy_time + 10.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub vehicle: VehicleParams,
    pub load: LoadState,
    pub compression: CompressionModel,
    pub plant_model: PlantModel,
    pub route: Route,
    /// Spacing used to turn the route into controller waypoints.
    pub waypoint_spacing: f64,
    pub map: LandmarkMap,
    pub feeding: Option<FeedingLayout>,
    pub sensors: SensorSuite,
    pub controller: ControllerConfig,
    pub localization: LocalizationConfig,
    pub cosim: CoSimConfig,
    /// Offset of the true start pose from the route start.
    pub initial_offset: Pose2D,
    pub design_space: Option<DesignSpace>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            vehicle: VehicleParams::default(),
            load: LoadState::default(),
            compression: CompressionModel::default(),
            plant_model: PlantModel::Kinematic,
            route: Route::from_waypoints(&[Waypoint::new(0.0, 0.0), Waypoint::new(10.0, 0.0)]),
            waypoint_spacing: 1.0,
            map: LandmarkMap::default(),
            feeding: None,
            sensors: SensorSuite::default(),
            controller: ControllerConfig::default(),
            localization: LocalizationConfig::default(),
            cosim: CoSimConfig::default(),
            initial_offset: Pose2D::default(),
            design_space: None,
        }
    }
}

/// Route, map and feed plan after expanding a feeding layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedWorld {
    pub route: Route,
    pub map: LandmarkMap,
    pub plan: Option<FeedPlan>,
    pub duration_cap: f64,
}

impl Scenario {
    pub fn resolve(&self) -> ResolvedWorld {
        match &self.feeding {
            Some(layout) => ResolvedWorld {
                route: layout.route(),
                map: layout.map(),
                plan: Some(layout.plan()),
                duration_cap: self.cosim.duration_cap.min(layout.duration_cap()),
            },
            None => ResolvedWorld {
                route: self.route.clone(),
                map: self.map.clone(),
                plan: None,
                duration_cap: self.cosim.duration_cap,
            },
        }
    }

    pub fn validate(&self) -> Result<(), CoSimError> {
        let invalid = |e: &dyn std::fmt::Display| CoSimError::InvalidScenario(e.to_string());
        self.vehicle.validate()?;
        self.cosim.validate()?;
        self.controller.tracker.validate()?;
        self.sensors.vision.validate().map_err(|e| invalid(&e))?;
        for r in [self.sensors.rfid_front, self.sensors.rfid_rear].into_iter().flatten() {
            r.validate().map_err(|e| invalid(&e))?;
            if integer_ratio(r.poll_period, self.cosim.ct_step).is_none() {
                return Err(invalid(&"RFID poll_period must be an integer multiple of ct_step"));
            }
        }
        if !(self.waypoint_spacing > 0.0) {
            return Err(invalid(&"waypoint_spacing must be positive"));
        }
        if !(self.sensors.vision_period > 0.0) {
            return Err(invalid(&"vision_period must be positive"));
        }
        if let Some(l) = &self.feeding {
            if !(l.tag_spacing > 0.0 && l.cage_pitch > 0.0 && l.tag_intervals >= 1) {
                return Err(invalid(&"feeding layout needs positive spacing, pitch and at least one interval"));
            }
        }
        let world = self.resolve();
        if let Some(v) = validate_route(&world.route).first() {
            return Err(invalid(&format!("route segment {}: {:?}", v.segment, v.rule)));
        }
        world.map.validate().map_err(|e| invalid(&e))?;
        if let Some(plan) = &world.plan {
            plan.validate()?;
        }
        Ok(())
    }

    /// Shared design parameters: constants fixed for the run.
    pub fn sdps(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("speed", self.controller.cruise_speed),
            ("mu", self.vehicle.friction),
            ("delta_cg", self.load.delta_cg),
            ("load_mass", self.load.load_mass),
        ];
        if let Some(l) = &self.feeding {
            out.push(("d_t", l.tag_spacing));
        }
        out
    }

    /// Sets a named parameter; used by design-space sweeps.
    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<(), CoSimError> {
        let need_feeding = || CoSimError::InvalidScenario(format!("parameter {name} needs a feeding layout"));
        match name {
            "speed" => self.controller.cruise_speed = value,
            "mu" => self.vehicle.friction = value,
            "delta_cg" => self.load.delta_cg = value,
            "load_mass" => self.load.load_mass = value,
            "x_init" => self.initial_offset.x = value,
            "y_init" => self.initial_offset.y = value,
            "psi_init" => self.initial_offset.psi = value,
            "look_ahead" => self.controller.tracker.look_ahead = value,
            "seed" => self.cosim.seed = value as u64,
            "d_t" => self.feeding.as_mut().ok_or_else(need_feeding)?.tag_spacing = value,
            "compression" => self.compression = CompressionModel::linear_table(600.0, value),
            _ => return Err(CoSimError::InvalidScenario(format!("unknown parameter {name}"))),
        }
        Ok(())
    }

    /// Selects a named alternative; used by mode axes of a design space.
    pub fn set_mode(&mut self, name: &str, mode: &str) -> Result<(), CoSimError> {
        let unknown = || CoSimError::InvalidScenario(format!("unknown mode {mode} for {name}"));
        match name {
            "method" => {
                self.controller.tracker.method = match mode {
                    "heading" => TrackingMethod::HeadingError,
                    "lateral" => TrackingMethod::LateralError,
                    "segment" => TrackingMethod::LineSegment,
                    _ => return Err(unknown()),
                }
            }
            "plant" => self.plant_model = crate::scenario::parse_plant_model(mode).ok_or_else(unknown)?,
            "wiring" => {
                self.localization.wiring = match mode {
                    "truth" => Wiring::GroundTruth,
                    "ekf" => Wiring::Ekf,
                    _ => return Err(unknown()),
                }
            }
            "rfid_model" => {
                self.localization.rfid_model = match mode {
                    "verbatim" => RfidModel::Verbatim,
                    "body" => RfidModel::BodyFrame,
                    _ => return Err(unknown()),
                }
            }
            "estimate" => {
                let method = crate::dse::EstimateMethod::ALL.into_iter().find(|m| m.name() == mode).ok_or_else(unknown)?;
                self.localization.radius = method.radius_source(crate::dse::FULL_LOAD);
            }
            _ => return Err(CoSimError::InvalidScenario(format!("unknown mode axis {name}"))),
        }
        Ok(())
    }

    pub fn start_pose(&self, route: &Route) -> Pose2D {
        let start = route.segments.first().map(|s| s.start).unwrap_or_default();
        Pose2D::new(start.x, start.y, route.start_heading())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub truth: VehicleState,
    pub monitored: Pose2D,
    pub psi_dot_s: f64,
    pub u_o: f64,
    pub delta_o: f64,
    /// Belief mean and covariance trace when the EKF runs.
    pub belief: Option<(Pose2D, f64)>,
    pub xte: f64,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    DurationCap,
    Fault(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispenseRecord {
    pub index: usize,
    pub time: f64,
    pub target: f64,
    pub true_position: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub termination: Termination,
    pub dispenses: Vec<DispenseRecord>,
    pub placements: usize,
    pub tag_events: Vec<TagEvent>,
    pub covariance_ok: bool,
    pub guard_activations: u32,
    /// Wheel radius the controller assumed.
    pub assumed_radius: f64,
    pub true_radius: f64,
}

impl Trace {
    pub fn max_xte(&self) -> f64 {
        self.rows.iter().map(|r| r.xte).fold(0.0, f64::max)
    }

    pub fn mean_xte(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.xte).sum::<f64>() / self.rows.len() as f64
    }

    pub fn rms_xte(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        (self.rows.iter().map(|r| r.xte * r.xte).sum::<f64>() / self.rows.len() as f64).sqrt()
    }

    pub fn hits(&self) -> usize {
        self.dispenses.iter().filter(|d| d.hit).count()
    }

    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    /// Distance between the true position and the monitored estimate at the
    /// last row.
    pub fn final_position_error(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| {
            let est = r.belief.map_or(r.monitored, |b| b.0);
            (est.x - r.truth.pose.x).hypot(est.y - r.truth.pose.y)
        })
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }
}

struct PendingIn {
    tag: u32,
    reader: ReaderId,
    time: f64,
    offset: f64,
    half_length: f64,
}

struct Readers {
    readers: Vec<RfidReader>,
    rng: ChaCha8Rng,
    poll_every: usize,
}

fn resolve_radius(source: RadiusSource, scenario: &Scenario, true_radius: f64, rng: &mut ChaCha8Rng) -> Result<f64, CoSimError> {
    let nominal = scenario.vehicle.wheel_radius;
    let r = match source {
        RadiusSource::Nominal => nominal,
        RadiusSource::Fixed(r) => r,
        RadiusSource::Static { full_load } => {
            let full = LoadState { load_mass: full_load, delta_cg: scenario.load.delta_cg };
            let loaded = crate::plant::effective_wheel_radius(&scenario.vehicle, &full, &scenario.compression)?;
            (nominal + loaded) / 2.0
        }
        RadiusSource::PreCalibrated { accuracy } => true_radius + crate::dse::bounded_error(rng, accuracy),
        RadiusSource::Estimator { bias } => true_radius + bias,
    };
    if !(r > 0.0) {
        return Err(CoSimError::InvalidScenario(format!("assumed wheel radius {r} m is not positive")));
    }
    Ok(r)
}

/// Runs one co-simulation to completion, the duration cap, or a fault.
pub fn run(scenario: &Scenario) -> Result<Trace, CoSimError> {
    scenario.validate()?;
    let world = scenario.resolve();
    let cfg = &scenario.cosim;
    let seed = cfg.seed;
    let plant = Plant::new(scenario.vehicle.clone(), scenario.load, scenario.plant_model, &scenario.compression)?;
    let waypoints = world.route.densify(scenario.waypoint_spacing);
    let speed_cap = match &world.plan {
        Some(p) => scenario.controller.speed_cap.min(p.feed_speed.max(crate::controller::FEED_SPEED_CAP)),
        None => scenario.controller.speed_cap,
    };
    let cruise = scenario.controller.cruise_speed.min(speed_cap);
    let mut controller = Controller::new(scenario.controller.tracker, waypoints, cruise, speed_cap, world.plan.clone())?;

    let mut imu_rng = stream_rng(seed, Stream::Imu);
    let mut vision_rng = stream_rng(seed, Stream::Vision);
    let mut loc_rng = stream_rng(seed, Stream::Localization);
    let mut env_rng = stream_rng(seed, Stream::Environment);

    let true_radius = plant.rear_radius;
    let assumed_radius = resolve_radius(scenario.localization.radius, scenario, true_radius, &mut env_rng)?;
    let enc = scenario.sensors.encoder;
    let loc = &scenario.localization;
    let wall = world.map.sidewall;

    let nominal = scenario.start_pose(&world.route);
    let off = scenario.initial_offset;
    let mut state = VehicleState::at_rest(Pose2D::new(nominal.x + off.x, nominal.y + off.y, nominal.psi + off.psi));
    let ekf = loc.wiring == Wiring::Ekf;
    let s = loc.initial_sigma;
    let mut belief = Belief::new(nominal, Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2])));
    let mut covariance_ok = true;

    let mut readers = Readers {
        readers: [(ReaderId::Front, scenario.sensors.rfid_front), (ReaderId::Rear, scenario.sensors.rfid_rear)]
            .into_iter()
            .filter_map(|(id, m)| m.map(|m| RfidReader::new(id, m)))
            .collect::<Result<_, _>>()
            .map_err(|e| CoSimError::InvalidScenario(e.to_string()))?,
        rng: stream_rng(seed, Stream::Rfid),
        poll_every: 1,
    };
    if let Some(first) = readers.readers.first() {
        readers.poll_every = integer_ratio(first.model.poll_period, cfg.ct_step).unwrap_or(1);
    }
    let mut tag_events: Vec<TagEvent> = Vec::new();
    let mut pending_events: Vec<TagEvent> = Vec::new();
    let mut pending_in: Vec<PendingIn> = Vec::new();
    let mut enc_log = EncoderLog::default();
    let rear_counts = |st: &VehicleState| enc.sample((st.wheel_angle_travel[2] + st.wheel_angle_travel[3]) / 2.0);

    let substeps = cfg.substeps();
    let dt = cfg.de_period / substeps as f64;
    let periods = (world.duration_cap / cfg.de_period + 1e-9).floor() as usize;
    let vision_every = integer_ratio(scenario.sensors.vision_period, cfg.de_period).unwrap_or(1).max(1);

    let mut rows = Vec::with_capacity(periods + 1);
    let mut dispenses = Vec::new();
    let mut last_counts = rear_counts(&state);
    let mut termination = Termination::DurationCap;
    let mut micro = 0usize;

    enc_log.push(0.0, last_counts);
    for r in readers.readers.iter_mut() {
        pending_events.extend(r.poll(&state.pose, &world.map, 0.0, &mut readers.rng));
    }

    for k in 0..=periods {
        let t = k as f64 * cfg.de_period;
        let mut events = Vec::new();

        // Sensors.
        let counts = rear_counts(&state);
        let u_e = if k == 0 {
            0.0
        } else {
            speed_estimate(&[counts - last_counts], cfg.de_period, assumed_radius, enc.counts_per_rev)
        };
        last_counts = counts;
        let psi_dot_s = scenario.sensors.imu.sample(state.yaw_rate, &mut imu_rng);

        if ekf && k > 0 {
            belief = predict(&belief, u_e, psi_dot_s, cfg.de_period, &loc.noise.process)
                .map_err(|e| CoSimError::InvalidScenario(e.to_string()))?;
            covariance_ok &= belief.is_psd();
        }

        // Tag edges from the polls of the last period. A tag sits under the
        // zone centre halfway between its In and Out edges; odometry carries
        // that fix forward to now.
        let mut corrections: Vec<(u32, f64, f64)> = Vec::new();
        for e in pending_events.drain(..) {
            events.push(format!("tag:{}:{:?}:{:?}", e.tag_id, e.reader, e.edge).to_lowercase());
            tag_events.push(e);
            if !(ekf && loc.use_rfid) {
                continue;
            }
            let Some(model) = readers.readers.iter().find(|r| r.id == e.reader).map(|r| r.model) else {
                continue;
            };
            match e.edge {
                Edge::In => pending_in.push(PendingIn {
                    tag: e.tag_id,
                    reader: e.reader,
                    time: e.time,
                    offset: model.mount_offset,
                    half_length: model.semi_major,
                }),
                Edge::Out => {
                    if let Some(i) = pending_in.iter().position(|p| p.tag == e.tag_id && p.reader == e.reader) {
                        let p = pending_in.remove(i);
                        if let Ok(g_mid) = enc_log.counts_at(0.5 * (p.time + e.time)) {
                            let travelled = distance_from_counts(counts - g_mid, enc.counts_per_rev, assumed_radius);
                            corrections.push((e.tag_id, p.offset - travelled, 1.0));
                        }
                    }
                }
            }
        }
        // An In edge without its Out falls back to a leading-edge fix with
        // inflated noise.
        let mut i = 0;
        while i < pending_in.len() {
            if t - pending_in[i].time > loc.rfid_out_timeout {
                let p = pending_in.remove(i);
                if let Ok(g_in) = enc_log.counts_at(p.time) {
                    let travelled = distance_from_counts(counts - g_in, enc.counts_per_rev, assumed_radius);
                    corrections.push((p.tag, p.offset + p.half_length - travelled, 4.0));
                }
            } else {
                i += 1;
            }
        }
        for (tag_id, ahead, inflate) in corrections {
            let Some(tag) = world.map.tag(tag_id) else { continue };
            let z = rfid_zone_measurement(&belief.mean, tag.x, tag.y, ahead, loc.rfid_model);
            if let Ok(b) = update_rfid(&belief, &z, tag.x, tag.y, &(loc.noise.r_rfid * inflate), loc.rfid_model) {
                belief = b;
                covariance_ok &= belief.is_psd();
            }
        }

        if ekf && k % vision_every == 0 {
            let truth = state.pose;
            if loc.use_poles {
                for obs in vision_poles(&truth, &world.map, &scenario.sensors.vision, &mut vision_rng) {
                    let pole = world.map.poles[obs.landmark];
                    if let Ok(b) = update_pole(&belief, obs.range, obs.bearing, pole.x, pole.y, &loc.noise.r_pole) {
                        belief = b;
                        covariance_ok &= belief.is_psd();
                    }
                }
            }
            if let (true, Some(w)) = (loc.use_sidewall, wall) {
                if w.signed_distance(truth.x, truth.y).abs() <= scenario.sensors.vision.max_range {
                    if let Ok(obs) = vision_sidewall(&truth, &w, &scenario.sensors.vision, &mut vision_rng) {
                        if let Ok(b) = update_sidewall(&belief, obs.distance, obs.angle, &w, &loc.noise.r_sidewall) {
                            belief = b;
                            covariance_ok &= belief.is_psd();
                        }
                    }
                }
            }
        }

        let monitored = if ekf {
            belief.pose()
        } else {
            let sg = scenario.sensors.position_sigma;
            Pose2D::new(
                state.pose.x + gaussian(&mut loc_rng, sg),
                state.pose.y + gaussian(&mut loc_rng, sg),
                wrap_angle(state.pose.psi + gaussian(&mut loc_rng, scenario.sensors.heading_sigma)),
            )
        };
        let m = Monitored {
            pose: monitored,
            yaw_rate: psi_dot_s,
            speed: u_e,
            along: wall.map(|w| w.along(monitored.x, monitored.y)),
        };
        let snapshot = |events| Snapshot {
            t,
            state: &state,
            monitored: &m,
            belief: ekf.then_some(&belief),
            route: &world.route,
            events,
        };

        // Controller.
        let out = match controller.step(&m, t) {
            Ok(o) => o,
            Err(e) => {
                events.push(format!("fault:{e}"));
                rows.push(snapshot(events).row(&ControlOutput::default()));
                termination = Termination::Fault(e.to_string());
                break;
            }
        };
        if let (Some(d), Some(w), Some(plan)) = (out.dispense, wall, world.plan.as_ref()) {
            let target = plan.placements[d.index].position;
            let true_position = w.along(state.pose.x, state.pose.y);
            let hit = (true_position - target).abs() <= plan.half_tolerance;
            events.push(format!("dispense:{}:{}", d.index, if hit { "hit" } else { "miss" }));
            dispenses.push(DispenseRecord { index: d.index, time: t, target, true_position, hit });
        }
        let done = controller.is_complete();
        if done {
            events.push("complete".into());
        }
        rows.push(snapshot(events).row(&out));
        if done {
            termination = Termination::Completed;
            break;
        }
        if k == periods {
            break;
        }

        // Plant, with the controls held over the period.
        let act = Actuation { u_o: out.u_o, delta_o: out.delta_o };
        plant.latch_actuation(&mut state, &act);
        for j in 0..substeps {
            let t_end = t + (j + 1) as f64 * dt;
            match plant.step(&state, &act, dt, t_end) {
                Ok(s) => state = s,
                Err(e) => {
                    if let Some(last) = rows.last_mut() {
                        last.events.push(format!("fault:{e}"));
                    }
                    termination = Termination::Fault(e.to_string());
                    break;
                }
            }
            micro += 1;
            if !readers.readers.is_empty() && micro.is_multiple_of(readers.poll_every) {
                enc_log.push(t_end, rear_counts(&state));
                for r in readers.readers.iter_mut() {
                    pending_events.extend(r.poll(&state.pose, &world.map, t_end, &mut readers.rng));
                }
            }
        }
        if matches!(termination, Termination::Fault(_)) {
            break;
        }
    }

    Ok(Trace {
        rows,
        termination,
        dispenses,
        placements: world.plan.as_ref().map_or(0, |p| p.placements.len()),
        tag_events,
        covariance_ok,
        guard_activations: belief.guard_activations,
        assumed_radius,
        true_radius,
    })
}

struct Snapshot<'a> {
    t: f64,
    state: &'a VehicleState,
    monitored: &'a Monitored,
    belief: Option<&'a Belief>,
    route: &'a Route,
    events: Vec<String>,
}

impl Snapshot<'_> {
    fn row(self, out: &ControlOutput) -> TraceRow {
        TraceRow {
            t: self.t,
            truth: *self.state,
            monitored: self.monitored.pose,
            psi_dot_s: self.monitored.yaw_rate,
            u_o: out.u_o,
            delta_o: out.delta_o,
            belief: self.belief.map(|b| (b.pose(), b.cov.trace())),
            xte: xte(&self.state.pose, self.route).unwrap_or(f64::NAN),
            events: self.events,
        }
    }
}

/// What a run is judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Viable when the route completes with maximum XTE at or below the bound.
    MaxXte(f64),
    /// Cost from the share of placements that land within tolerance.
    FeedSuccess,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub viable: bool,
    pub cost: f64,
    pub max_xte: f64,
    pub hits: usize,
    pub placements: usize,
    pub reason: Option<String>,
}

pub fn evaluate(trace: &Trace, criterion: &Criterion) -> Evaluation {
    let max_xte = trace.max_xte();
    let (hits, placements) = (trace.hits(), trace.placements);
    let incomplete = match &trace.termination {
        Termination::Completed => None,
        Termination::DurationCap => Some("duration cap reached before completion".to_string()),
        Termination::Fault(f) => Some(format!("fault: {f}")),
    };
    match *criterion {
        Criterion::MaxXte(bound) => {
            let reason = incomplete.or_else(|| {
                (max_xte.is_nan() || max_xte > bound).then(|| format!("max XTE {max_xte:.4} m exceeds {bound} m"))
            });
            Evaluation { viable: reason.is_none(), cost: max_xte, max_xte, hits, placements, reason }
        }
        Criterion::FeedSuccess => {
            let cost = crate::dse::feed_cost(hits, placements).unwrap_or(0.0);
            let reason = incomplete.or_else(|| (placements == 0).then(|| "no placements in the feed plan".into()));
            Evaluation { viable: reason.is_none(), cost, max_xte, hits, placements, reason }
        }
    }
}
