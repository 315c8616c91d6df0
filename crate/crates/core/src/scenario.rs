//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! [vehicle]
//! mass = 350 kg
//! steer_limit = 35 deg
//! [route]
//! start = 0, 0 m
//! line_to = 10, 0 m
//! arc_to = 14, 4, 4 m ccw
//! ```
//!
//! Every quantity carries its unit; angles accept `deg` wherever `rad` is
//! expected. Unknown sections and keys are errors, reported with their line.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::cosim::{RadiusSource, Scenario, Wiring};
use crate::dse::{Axis, AxisKind, DesignSpace};
use crate::localization::{ProcessNoise, RfidModel};
use crate::plant::{CompressionModel, PlantModel, SteerAxle};
use crate::controller::TrackingMethod;
use crate::world::{FeedZone, Landmark, RfidTag, Route, RouteSegment, Turn, WallLine, Waypoint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Parse(Vec<LineError>),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

type Getter = fn(&Scenario) -> Option<f64>;
type Setter = fn(&mut Scenario, f64);

struct Scalar {
    section: &'static str,
    key: &'static str,
    unit: &'static str,
    get: Getter,
    set: Setter,
}

macro_rules! scalar {
    ($section:literal, $key:literal, $unit:literal, |$s:ident| $path:expr) => {
        Scalar {
            section: $section,
            key: $key,
            unit: $unit,
            get: |$s: &Scenario| Some($path),
            set: |$s: &mut Scenario, v: f64| $path = v,
        }
    };
}

macro_rules! optional {
    ($section:literal, $key:literal, $unit:literal, $field:ident . $inner:ident) => {
        Scalar {
            section: $section,
            key: $key,
            unit: $unit,
            get: |s: &Scenario| s.$field.map(|x| x.$inner),
            set: |s: &mut Scenario, v: f64| s.$field.get_or_insert_with(Default::default).$inner = v,
        }
    };
    ($section:literal, $key:literal, $unit:literal, sensors . $field:ident . $inner:ident) => {
        Scalar {
            section: $section,
            key: $key,
            unit: $unit,
            get: |s: &Scenario| s.sensors.$field.map(|x| x.$inner),
            set: |s: &mut Scenario, v: f64| s.sensors.$field.get_or_insert_with(Default::default).$inner = v,
        }
    };
}

fn control_noise(s: &Scenario, pick: fn(f64, f64, f64) -> f64) -> Option<f64> {
    match s.localization.noise.process {
        ProcessNoise::Control { speed_fraction, yaw_rate_sigma, floor } => Some(pick(speed_fraction, yaw_rate_sigma, floor)),
        ProcessNoise::Fixed(_) => None,
    }
}

fn set_control_noise(s: &mut Scenario, f: impl FnOnce(&mut f64, &mut f64, &mut f64)) {
    let (mut a, mut b, mut c) = match s.localization.noise.process {
        ProcessNoise::Control { speed_fraction, yaw_rate_sigma, floor } => (speed_fraction, yaw_rate_sigma, floor),
        ProcessNoise::Fixed(_) => (0.01, 0.005, 1e-10),
    };
    f(&mut a, &mut b, &mut c);
    s.localization.noise.process = ProcessNoise::Control { speed_fraction: a, yaw_rate_sigma: b, floor: c };
}

fn scalars() -> Vec<Scalar> {
    vec![
        scalar!("vehicle", "mass", "kg", |s| s.vehicle.mass),
        scalar!("vehicle", "wheelbase", "m", |s| s.vehicle.wheelbase),
        scalar!("vehicle", "cg_to_front", "m", |s| s.vehicle.cg_to_front),
        scalar!("vehicle", "track_width", "m", |s| s.vehicle.track_width),
        scalar!("vehicle", "cg_height", "m", |s| s.vehicle.cg_height),
        scalar!("vehicle", "yaw_inertia", "kg*m^2", |s| s.vehicle.yaw_inertia),
        scalar!("vehicle", "roll_inertia", "kg*m^2", |s| s.vehicle.roll_inertia),
        scalar!("vehicle", "roll_stiffness", "N*m/rad", |s| s.vehicle.roll_stiffness),
        scalar!("vehicle", "roll_damping", "N*m*s/rad", |s| s.vehicle.roll_damping),
        scalar!("vehicle", "cornering_front", "N/rad", |s| s.vehicle.cornering_front),
        scalar!("vehicle", "cornering_rear", "N/rad", |s| s.vehicle.cornering_rear),
        scalar!("vehicle", "wheel_radius", "m", |s| s.vehicle.wheel_radius),
        scalar!("vehicle", "friction", "", |s| s.vehicle.friction),
        scalar!("vehicle", "steer_limit", "rad", |s| s.vehicle.steer_limit),
        scalar!("vehicle", "steer_rate_limit", "rad/s", |s| s.vehicle.steer_rate_limit),
        scalar!("vehicle", "steer_lag", "s", |s| s.vehicle.steer_lag),
        scalar!("vehicle", "drive_lag", "s", |s| s.vehicle.drive_lag),
        scalar!("vehicle", "roll_load_shift", "N/rad", |s| s.vehicle.roll_load_shift),
        scalar!("load", "load_mass", "kg", |s| s.load.load_mass),
        scalar!("load", "delta_cg", "m", |s| s.load.delta_cg),
        scalar!("route", "waypoint_spacing", "m", |s| s.waypoint_spacing),
        Scalar {
            section: "map",
            key: "tag_spacing",
            unit: "m",
            get: |s| s.map.tag_spacing,
            set: |s, v| s.map.tag_spacing = Some(v),
        },
        optional!("feeding", "wall_offset", "m", feeding.wall_offset),
        optional!("feeding", "tag_spacing", "m", feeding.tag_spacing),
        optional!("feeding", "cage_pitch", "m", feeding.cage_pitch),
        optional!("feeding", "approach", "m", feeding.approach),
        optional!("feeding", "stop_before", "m", feeding.stop_before),
        optional!("feeding", "run_out", "m", feeding.run_out),
        optional!("feeding", "grams", "", feeding.grams),
        optional!("feeding", "half_tolerance", "m", feeding.half_tolerance),
        optional!("feeding", "feed_speed", "m/s", feeding.feed_speed),
        optional!("feeding", "deploy_time", "s", feeding.deploy_time),
        optional!("feeding", "pole_half_gap", "m", feeding.pole_half_gap),
        scalar!("sensors", "imu_sigma", "rad/s", |s| s.sensors.imu.yaw_rate_sigma),
        scalar!("sensors", "imu_bias", "rad/s", |s| s.sensors.imu.bias),
        scalar!("sensors", "vision_range", "m", |s| s.sensors.vision.max_range),
        scalar!("sensors", "vision_fov", "rad", |s| s.sensors.vision.field_of_view),
        scalar!("sensors", "range_sigma", "m", |s| s.sensors.vision.range_sigma),
        scalar!("sensors", "bearing_sigma", "rad", |s| s.sensors.vision.bearing_sigma),
        scalar!("sensors", "sidewall_distance_sigma", "m", |s| s.sensors.vision.sidewall_distance_sigma),
        scalar!("sensors", "sidewall_distance_bias", "m", |s| s.sensors.vision.sidewall_distance_bias),
        scalar!("sensors", "sidewall_angle_sigma", "rad", |s| s.sensors.vision.sidewall_angle_sigma),
        scalar!("sensors", "vision_period", "s", |s| s.sensors.vision_period),
        scalar!("sensors", "position_sigma", "m", |s| s.sensors.position_sigma),
        scalar!("sensors", "heading_sigma", "rad", |s| s.sensors.heading_sigma),
        optional!("rfid.front", "mount_offset", "m", sensors.rfid_front.mount_offset),
        optional!("rfid.front", "semi_major", "m", sensors.rfid_front.semi_major),
        optional!("rfid.front", "semi_minor", "m", sensors.rfid_front.semi_minor),
        optional!("rfid.front", "poll_period", "s", sensors.rfid_front.poll_period),
        optional!("rfid.rear", "mount_offset", "m", sensors.rfid_rear.mount_offset),
        optional!("rfid.rear", "semi_major", "m", sensors.rfid_rear.semi_major),
        optional!("rfid.rear", "semi_minor", "m", sensors.rfid_rear.semi_minor),
        optional!("rfid.rear", "poll_period", "s", sensors.rfid_rear.poll_period),
        scalar!("controller", "look_ahead", "m", |s| s.controller.tracker.look_ahead),
        scalar!("controller", "gain_heading", "", |s| s.controller.tracker.gain_heading),
        scalar!("controller", "gain_lateral", "rad/m", |s| s.controller.tracker.gain_lateral),
        scalar!("controller", "max_steer", "rad", |s| s.controller.tracker.max_steer),
        scalar!("controller", "cruise_speed", "m/s", |s| s.controller.cruise_speed),
        scalar!("controller", "speed_cap", "m/s", |s| s.controller.speed_cap),
        Scalar {
            section: "localization",
            key: "speed_fraction",
            unit: "",
            get: |s| control_noise(s, |a, _, _| a),
            set: |s, v| set_control_noise(s, |a, _, _| *a = v),
        },
        Scalar {
            section: "localization",
            key: "yaw_rate_sigma",
            unit: "rad/s",
            get: |s| control_noise(s, |_, b, _| b),
            set: |s, v| set_control_noise(s, |_, b, _| *b = v),
        },
        Scalar {
            section: "localization",
            key: "noise_floor",
            unit: "",
            get: |s| control_noise(s, |_, _, c| c),
            set: |s, v| set_control_noise(s, |_, _, c| *c = v),
        },
        scalar!("localization", "r_pole_range", "m^2", |s| s.localization.noise.r_pole[(0, 0)]),
        scalar!("localization", "r_pole_bearing", "rad^2", |s| s.localization.noise.r_pole[(1, 1)]),
        scalar!("localization", "r_sidewall_distance", "m^2", |s| s.localization.noise.r_sidewall[(0, 0)]),
        scalar!("localization", "r_sidewall_angle", "rad^2", |s| s.localization.noise.r_sidewall[(1, 1)]),
        scalar!("localization", "r_rfid_x", "m^2", |s| s.localization.noise.r_rfid[(0, 0)]),
        scalar!("localization", "r_rfid_y", "m^2", |s| s.localization.noise.r_rfid[(1, 1)]),
        scalar!("localization", "initial_sigma_x", "m", |s| s.localization.initial_sigma[0]),
        scalar!("localization", "initial_sigma_y", "m", |s| s.localization.initial_sigma[1]),
        scalar!("localization", "initial_sigma_psi", "rad", |s| s.localization.initial_sigma[2]),
        scalar!("localization", "rfid_out_timeout", "s", |s| s.localization.rfid_out_timeout),
        scalar!("cosim", "de_period", "s", |s| s.cosim.de_period),
        scalar!("cosim", "ct_step", "s", |s| s.cosim.ct_step),
        scalar!("cosim", "duration_cap", "s", |s| s.cosim.duration_cap),
        scalar!("initial", "x", "m", |s| s.initial_offset.x),
        scalar!("initial", "y", "m", |s| s.initial_offset.y),
        scalar!("initial", "psi", "rad", |s| s.initial_offset.psi),
    ]
}

const SECTIONS: [&str; 15] = [
    "scenario",
    "vehicle",
    "load",
    "compression",
    "route",
    "map",
    "feeding",
    "sensors",
    "rfid.front",
    "rfid.rear",
    "controller",
    "localization",
    "cosim",
    "initial",
    "design",
];

/// Keys handled outside the scalar table, per section.
fn special_keys(section: &str) -> &'static [&'static str] {
    match section {
        "scenario" => &["name", "plant"],
        "compression" => &["loads", "compressions", "linear"],
        "route" => &["start", "line_to", "arc_to"],
        "map" => &["pole", "tag", "sidewall", "feed_zone"],
        "feeding" => &["tag_intervals", "entrance_poles"],
        "sensors" => &["encoder_counts", "encoder_quantized"],
        "controller" => &["method"],
        "localization" => &["wiring", "process", "fixed_q", "rfid_model", "radius", "use_poles", "use_sidewall", "use_rfid"],
        "cosim" => &["seed"],
        "design" => &["axis"],
        _ => &[],
    }
}

fn repeatable(key: &str) -> bool {
    matches!(key, "line_to" | "arc_to" | "pole" | "tag" | "feed_zone" | "axis")
}

/// Conversion factor from `unit` to `canonical`. Degrees stand in for radians
/// when radians appear in the numerator.
fn unit_factor(unit: &str, canonical: &str) -> Option<f64> {
    if unit == canonical {
        return Some(1.0);
    }
    let deg = PI / 180.0;
    match (canonical, unit) {
        ("rad", "deg") | ("rad/s", "deg/s") | ("rad/m", "deg/m") => Some(deg),
        ("rad^2", "deg^2") => Some(deg * deg),
        _ => None,
    }
}

/// Splits `"1, 2.5 m"` into numbers and a trailing unit; `words` leading or
/// trailing non-numeric tokens are returned separately.
fn split_quantity(raw: &str) -> (Vec<&str>, Vec<&str>) {
    let mut nums = Vec::new();
    let mut words = Vec::new();
    for tok in raw.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        if tok.parse::<f64>().is_ok() && words.is_empty() {
            nums.push(tok);
        } else {
            words.push(tok);
        }
    }
    (nums, words)
}

fn parse_numbers(raw: &str, canonical: &str, count: Option<usize>) -> Result<(Vec<f64>, Vec<String>), String> {
    let (nums, mut words) = split_quantity(raw);
    if nums.is_empty() {
        return Err(format!("expected a number in '{raw}'"));
    }
    if let Some(n) = count {
        if nums.len() != n {
            return Err(format!("expected {n} value(s), got {}", nums.len()));
        }
    }
    let factor = if canonical.is_empty() {
        1.0
    } else {
        let Some(unit) = (!words.is_empty()).then(|| words.remove(0)) else {
            return Err(format!("missing unit, expected {canonical}"));
        };
        unit_factor(unit, canonical).ok_or_else(|| format!("unit '{unit}' does not match {canonical}"))?
    };
    let values = nums
        .iter()
        .map(|t| t.parse::<f64>().map(|v| v * factor).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok((values, words.into_iter().map(String::from).collect()))
}

fn parse_scalar(raw: &str, canonical: &str) -> Result<f64, String> {
    let (v, rest) = parse_numbers(raw, canonical, Some(1))?;
    if !rest.is_empty() {
        return Err(format!("unexpected '{}'", rest.join(" ")));
    }
    Ok(v[0])
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw {
        "true" | "yes" => Ok(true),
        "false" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{raw}'")),
    }
}

pub fn parse_plant_model(s: &str) -> Option<PlantModel> {
    Some(match s {
        "kinematic" => PlantModel::Kinematic,
        "half-front" => PlantModel::HalfVehicle(SteerAxle::Front),
        "half-back" => PlantModel::HalfVehicle(SteerAxle::Back),
        "four-wheel" => PlantModel::FourWheel,
        _ => return None,
    })
}

pub fn plant_model_name(m: PlantModel) -> &'static str {
    match m {
        PlantModel::Kinematic => "kinematic",
        PlantModel::HalfVehicle(SteerAxle::Front) => "half-front",
        PlantModel::HalfVehicle(SteerAxle::Back) => "half-back",
        PlantModel::FourWheel => "four-wheel",
    }
}

fn method_name(m: TrackingMethod) -> &'static str {
    match m {
        TrackingMethod::HeadingError => "heading",
        TrackingMethod::LateralError => "lateral",
        TrackingMethod::LineSegment => "segment",
    }
}

/// Unit of a design-space parameter, used for axis values.
pub fn parameter_unit(name: &str) -> Option<&'static str> {
    Some(match name {
        "speed" => "m/s",
        "mu" | "seed" => "",
        "delta_cg" | "x_init" | "y_init" | "look_ahead" | "d_t" | "compression" => "m",
        "load_mass" => "kg",
        "psi_init" => "rad",
        _ => return None,
    })
}

const MODE_AXES: [&str; 5] = ["method", "plant", "wiring", "rfid_model", "estimate"];

fn parse_axis(raw: &str) -> Result<Axis, String> {
    let mut it = raw.splitn(3, char::is_whitespace);
    let (Some(name), Some(kind), Some(rest)) = (it.next(), it.next(), it.next()) else {
        return Err("axis needs: NAME range|set|modes VALUES".into());
    };
    let rest = rest.trim();
    if kind == "modes" {
        if !MODE_AXES.contains(&name) {
            return Err(format!("'{name}' is not a mode axis"));
        }
        let modes: Vec<String> = rest.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
        return Ok(Axis { name: name.into(), kind: AxisKind::ModeSet(modes) });
    }
    let unit = parameter_unit(name).ok_or_else(|| format!("unknown axis parameter '{name}'"))?;
    let (values, extra) = parse_numbers(rest, unit, None)?;
    if !extra.is_empty() {
        return Err(format!("unexpected '{}'", extra.join(" ")));
    }
    let kind = match kind {
        "range" => {
            let [lo, hi, step] = values[..] else { return Err("range needs lo, hi, step".into()) };
            AxisKind::ContinuousRange { lo, hi, step }
        }
        "set" => AxisKind::DiscreteSet(values),
        _ => return Err(format!("unknown axis kind '{kind}'")),
    };
    let axis = Axis { name: name.into(), kind };
    axis.validate().map_err(|e| e.to_string())?;
    Ok(axis)
}

fn parse_radius(raw: &str) -> Result<RadiusSource, String> {
    let (word, rest) = raw.split_once(char::is_whitespace).unwrap_or((raw, ""));
    let rest = rest.trim();
    Ok(match word {
        "nominal" if rest.is_empty() => RadiusSource::Nominal,
        "fixed" => RadiusSource::Fixed(parse_scalar(rest, "m")?),
        "static" => RadiusSource::Static { full_load: parse_scalar(rest, "kg")? },
        "precalibrated" => RadiusSource::PreCalibrated { accuracy: parse_scalar(rest, "m")? },
        "estimator" => RadiusSource::Estimator { bias: parse_scalar(rest, "m")? },
        _ => return Err(format!("unknown radius source '{raw}'")),
    })
}

#[derive(Default)]
struct Pending {
    loads: Option<Vec<f64>>,
    compressions: Option<Vec<f64>>,
    linear: Option<f64>,
    route_start: Option<Waypoint>,
    segments: Vec<RouteSegment>,
    route_seen: bool,
    poles: Vec<Landmark>,
    tags: Vec<RfidTag>,
    zones: Vec<FeedZone>,
    map_seen: bool,
    axes: Vec<Axis>,
}

fn apply_special(s: &mut Scenario, p: &mut Pending, section: &str, key: &str, raw: &str) -> Result<(), String> {
    let mode_err = || format!("unknown value '{raw}' for {key}");
    match (section, key) {
        ("scenario", "name") => s.name = raw.to_string(),
        ("scenario", "plant") => s.plant_model = parse_plant_model(raw).ok_or_else(mode_err)?,
        ("compression", "loads") => p.loads = Some(parse_numbers(raw, "kg", None)?.0),
        ("compression", "compressions") => p.compressions = Some(parse_numbers(raw, "m", None)?.0),
        ("compression", "linear") => p.linear = Some(parse_scalar(raw, "m/N")?),
        ("route", "start") => {
            let (v, _) = parse_numbers(raw, "m", Some(2))?;
            if p.route_start.is_some() {
                return Err("route start given twice".into());
            }
            p.route_start = Some(Waypoint::new(v[0], v[1]));
        }
        ("route", "line_to") | ("route", "arc_to") => {
            let from = p.segments.last().map(|s| s.end).or(p.route_start).ok_or("route needs a start first")?;
            if key == "line_to" {
                let (v, rest) = parse_numbers(raw, "m", Some(2))?;
                if !rest.is_empty() {
                    return Err(format!("unexpected '{}'", rest.join(" ")));
                }
                p.segments.push(RouteSegment::line(from, Waypoint::new(v[0], v[1])));
            } else {
                let (v, rest) = parse_numbers(raw, "m", Some(3))?;
                let turn = match rest.as_slice() {
                    [t] if t == "ccw" => Turn::Ccw,
                    [t] if t == "cw" => Turn::Cw,
                    _ => return Err("arc_to needs x, y, radius m followed by cw or ccw".into()),
                };
                p.segments.push(RouteSegment::arc(from, Waypoint::new(v[0], v[1]), v[2], turn));
            }
        }
        ("map", "pole") => {
            let (v, _) = parse_numbers(raw, "m", Some(2))?;
            p.poles.push(Landmark { x: v[0], y: v[1] });
        }
        ("map", "tag") => {
            let (id, rest) = raw.split_once(':').ok_or("tag needs 'ID: x, y m'")?;
            let id: u32 = id.trim().parse().map_err(|_| format!("bad tag id '{}'", id.trim()))?;
            let (v, _) = parse_numbers(rest, "m", Some(2))?;
            p.tags.push(RfidTag { id, x: v[0], y: v[1] });
        }
        ("map", "feed_zone") => {
            let (v, _) = parse_numbers(raw, "m", Some(3))?;
            p.zones.push(FeedZone { x: v[0], y: v[1], half_width: v[2] });
        }
        ("map", "sidewall") => {
            let (v, _) = parse_numbers(raw, "", Some(3))?;
            s.map.sidewall = Some(WallLine { a: v[0], b: v[1], c: v[2] });
        }
        ("feeding", "tag_intervals") => {
            s.feeding.get_or_insert_with(Default::default).tag_intervals =
                raw.parse().map_err(|_| format!("bad count '{raw}'"))?
        }
        ("feeding", "entrance_poles") => s.feeding.get_or_insert_with(Default::default).entrance_poles = parse_bool(raw)?,
        ("sensors", "encoder_counts") => {
            s.sensors.encoder.counts_per_rev = raw.parse().map_err(|_| format!("bad count '{raw}'"))?
        }
        ("sensors", "encoder_quantized") => s.sensors.encoder.quantized = parse_bool(raw)?,
        ("controller", "method") => {
            s.controller.tracker.method = match raw {
                "heading" => TrackingMethod::HeadingError,
                "lateral" => TrackingMethod::LateralError,
                "segment" => TrackingMethod::LineSegment,
                _ => return Err(mode_err()),
            }
        }
        ("localization", "wiring") => {
            s.localization.wiring = match raw {
                "truth" => Wiring::GroundTruth,
                "ekf" => Wiring::Ekf,
                _ => return Err(mode_err()),
            }
        }
        ("localization", "process") => match raw {
            "control" => set_control_noise(s, |_, _, _| {}),
            "fixed" => {
                if !matches!(s.localization.noise.process, ProcessNoise::Fixed(_)) {
                    s.localization.noise.process = ProcessNoise::Fixed(Matrix3::zeros());
                }
            }
            _ => return Err(mode_err()),
        },
        ("localization", "fixed_q") => {
            let (v, _) = parse_numbers(raw, "", Some(3))?;
            s.localization.noise.process = ProcessNoise::Fixed(Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2])));
        }
        ("localization", "rfid_model") => {
            s.localization.rfid_model = match raw {
                "verbatim" => RfidModel::Verbatim,
                "body" => RfidModel::BodyFrame,
                _ => return Err(mode_err()),
            }
        }
        ("localization", "radius") => s.localization.radius = parse_radius(raw)?,
        ("localization", "use_poles") => s.localization.use_poles = parse_bool(raw)?,
        ("localization", "use_sidewall") => s.localization.use_sidewall = parse_bool(raw)?,
        ("localization", "use_rfid") => s.localization.use_rfid = parse_bool(raw)?,
        ("cosim", "seed") => s.cosim.seed = raw.parse().map_err(|_| format!("bad seed '{raw}'"))?,
        ("design", "axis") => p.axes.push(parse_axis(raw)?),
        _ => return Err(format!("unknown key '{key}' in [{section}]")),
    }
    Ok(())
}

/// Parses a scenario. Every line-level problem is collected before returning.
pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let table = scalars();
    let mut s = Scenario::default();
    let mut p = Pending::default();
    let mut errors = Vec::new();
    let mut section: Option<&str> = None;
    let mut seen: Vec<(String, String)> = Vec::new();
    let mut seen_sections: Vec<&str> = Vec::new();
    let mut last_line = 0;

    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut err = |m: String| errors.push(LineError { line: n, message: m });
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            match SECTIONS.iter().find(|s| **s == name) {
                Some(sec) if seen_sections.contains(sec) => {
                    err(format!("section [{name}] repeated"));
                    section = None;
                }
                Some(sec) => {
                    seen_sections.push(sec);
                    section = Some(sec);
                    match *sec {
                        "feeding" => s.feeding = Some(s.feeding.unwrap_or_default()),
                        "rfid.front" => s.sensors.rfid_front = Some(s.sensors.rfid_front.unwrap_or_default()),
                        "rfid.rear" => s.sensors.rfid_rear = Some(s.sensors.rfid_rear.unwrap_or_default()),
                        "route" => p.route_seen = true,
                        "map" => p.map_seen = true,
                        "design" => s.design_space = Some(DesignSpace::default()),
                        _ => {}
                    }
                }
                None => {
                    err(format!("unknown section [{name}]"));
                    section = None;
                }
            }
            continue;
        }
        let Some((key, raw)) = line.split_once('=') else {
            err(format!("expected 'key = value', got '{line}'"));
            continue;
        };
        let (key, raw) = (key.trim(), raw.trim());
        let Some(sec) = section else {
            err(format!("key '{key}' outside a known section"));
            continue;
        };
        if !repeatable(key) {
            let id = (sec.to_string(), key.to_string());
            if seen.contains(&id) {
                err(format!("key '{key}' repeated in [{sec}]"));
                continue;
            }
            seen.push(id);
        }
        if let Some(f) = table.iter().find(|f| f.section == sec && f.key == key) {
            match parse_scalar(raw, f.unit) {
                Ok(v) => (f.set)(&mut s, v),
                Err(m) => err(format!("{key}: {m}")),
            }
        } else if special_keys(sec).contains(&key) {
            if let Err(m) = apply_special(&mut s, &mut p, sec, key, raw) {
                err(format!("{key}: {m}"));
            }
        } else {
            err(format!("unknown key '{key}' in [{sec}]"));
        }
    }

    let mut tail = |m: String| errors.push(LineError { line: last_line, message: m });
    if let Some(k) = p.linear {
        if p.loads.is_some() || p.compressions.is_some() {
            tail("compression: give either linear or loads/compressions".into());
        }
        s.compression = CompressionModel::Linear { k };
    } else if let (Some(l), Some(c)) = (&p.loads, &p.compressions) {
        if l.len() != c.len() {
            tail("compression: loads and compressions differ in length".into());
        }
        s.compression = CompressionModel::Table(l.iter().copied().zip(c.iter().copied()).collect());
    } else if p.loads.is_some() || p.compressions.is_some() {
        tail("compression: loads and compressions go together".into());
    }
    if p.route_seen {
        s.route = Route::new(p.segments);
    }
    if p.map_seen {
        s.map.poles = p.poles;
        s.map.rfid_tags = p.tags;
        s.map.feed_zones = p.zones;
    }
    if let Some(d) = s.design_space.as_mut() {
        d.axes = p.axes;
        if let Err(e) = d.validate() {
            tail(e.to_string());
        }
    }
    if !errors.is_empty() {
        return Err(ScenarioError::Parse(errors));
    }
    Ok(s)
}

/// Parses and validates a scenario in one step.
pub fn load(text: &str) -> Result<Scenario, ScenarioError> {
    let s = parse(text)?;
    s.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    Ok(s)
}

pub fn load_file(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
    load(&text)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ")
}

fn with_unit(value: String, unit: &str) -> String {
    if unit.is_empty() {
        value
    } else {
        format!("{value} {unit}")
    }
}

fn axis_line(a: &Axis) -> String {
    match &a.kind {
        AxisKind::ModeSet(m) => format!("{} modes {}", a.name, m.join(", ")),
        AxisKind::ContinuousRange { lo, hi, step } => {
            format!("{} range {}", a.name, with_unit(list(&[*lo, *hi, *step]), parameter_unit(&a.name).unwrap_or("")))
        }
        AxisKind::DiscreteSet(v) => format!("{} set {}", a.name, with_unit(list(v), parameter_unit(&a.name).unwrap_or(""))),
    }
}

/// Writes a scenario in canonical units; [`parse`] reads it back unchanged.
pub fn serialize(s: &Scenario) -> String {
    let table = scalars();
    let mut out = String::new();
    for sec in SECTIONS {
        let mut body: Vec<String> = Vec::new();
        let mut kv = |k: &str, v: String| body.push(format!("{k} = {v}"));
        match sec {
            "scenario" => {
                kv("name", s.name.clone());
                kv("plant", plant_model_name(s.plant_model).into());
            }
            "compression" => match &s.compression {
                CompressionModel::Linear { k } => kv("linear", format!("{} m/N", num(*k))),
                CompressionModel::Table(t) => {
                    kv("loads", with_unit(list(&t.iter().map(|p| p.0).collect::<Vec<_>>()), "kg"));
                    kv("compressions", with_unit(list(&t.iter().map(|p| p.1).collect::<Vec<_>>()), "m"));
                }
            },
            "route" => {
                if let Some(first) = s.route.segments.first() {
                    kv("start", format!("{}, {} m", num(first.start.x), num(first.start.y)));
                }
                for seg in &s.route.segments {
                    match seg.kind {
                        crate::world::SegmentKind::Line => kv("line_to", format!("{}, {} m", num(seg.end.x), num(seg.end.y))),
                        crate::world::SegmentKind::Arc { radius, turn } => kv(
                            "arc_to",
                            format!(
                                "{}, {}, {} m {}",
                                num(seg.end.x),
                                num(seg.end.y),
                                num(radius),
                                if turn == Turn::Ccw { "ccw" } else { "cw" }
                            ),
                        ),
                    }
                }
            }
            "map" => {
                for p in &s.map.poles {
                    kv("pole", format!("{}, {} m", num(p.x), num(p.y)));
                }
                for t in &s.map.rfid_tags {
                    kv("tag", format!("{}: {}, {} m", t.id, num(t.x), num(t.y)));
                }
                for z in &s.map.feed_zones {
                    kv("feed_zone", format!("{}, {}, {} m", num(z.x), num(z.y), num(z.half_width)));
                }
                if let Some(w) = s.map.sidewall {
                    kv("sidewall", list(&[w.a, w.b, w.c]));
                }
            }
            "feeding" => {
                let Some(f) = &s.feeding else { continue };
                kv("tag_intervals", f.tag_intervals.to_string());
                kv("entrance_poles", f.entrance_poles.to_string());
            }
            "rfid.front" if s.sensors.rfid_front.is_none() => continue,
            "rfid.rear" if s.sensors.rfid_rear.is_none() => continue,
            "sensors" => {
                kv("encoder_counts", s.sensors.encoder.counts_per_rev.to_string());
                kv("encoder_quantized", s.sensors.encoder.quantized.to_string());
            }
            "controller" => kv("method", method_name(s.controller.tracker.method).into()),
            "localization" => {
                let l = &s.localization;
                kv("wiring", if l.wiring == Wiring::Ekf { "ekf" } else { "truth" }.into());
                match l.noise.process {
                    ProcessNoise::Control { .. } => kv("process", "control".into()),
                    ProcessNoise::Fixed(q) => kv("fixed_q", list(&[q[(0, 0)], q[(1, 1)], q[(2, 2)]])),
                }
                kv("rfid_model", if l.rfid_model == RfidModel::BodyFrame { "body" } else { "verbatim" }.into());
                kv(
                    "radius",
                    match l.radius {
                        RadiusSource::Nominal => "nominal".into(),
                        RadiusSource::Fixed(r) => format!("fixed {} m", num(r)),
                        RadiusSource::Static { full_load } => format!("static {} kg", num(full_load)),
                        RadiusSource::PreCalibrated { accuracy } => format!("precalibrated {} m", num(accuracy)),
                        RadiusSource::Estimator { bias } => format!("estimator {} m", num(bias)),
                    },
                );
                kv("use_poles", l.use_poles.to_string());
                kv("use_sidewall", l.use_sidewall.to_string());
                kv("use_rfid", l.use_rfid.to_string());
            }
            "cosim" => kv("seed", s.cosim.seed.to_string()),
            "design" => {
                let Some(d) = &s.design_space else { continue };
                for a in &d.axes {
                    kv("axis", axis_line(a));
                }
            }
            _ => {}
        }
        for f in table.iter().filter(|f| f.section == sec) {
            if let Some(v) = (f.get)(s) {
                body.push(format!("{} = {}", f.key, with_unit(num(v), f.unit)));
            }
        }
        let _ = writeln!(out, "[{sec}]");
        for line in body {
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }
    out
}

/// Off-diagonal measurement covariance terms are not representable in the
/// file format; this reports whether a scenario survives a round trip.
pub fn representable(s: &Scenario) -> bool {
    let diag2 = |m: &Matrix2<f64>| *m == Matrix2::from_diagonal(&Vector2::new(m[(0, 0)], m[(1, 1)]));
    let n = &s.localization.noise;
    let q_ok = match n.process {
        ProcessNoise::Fixed(q) => q == Matrix3::from_diagonal(&q.diagonal()),
        ProcessNoise::Control { .. } => true,
    };
    q_ok && diag2(&n.r_pole) && diag2(&n.r_sidewall) && diag2(&n.r_rfid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosim::FeedingLayout;
    use crate::sensors::RfidReaderModel;
    use proptest::prelude::*;

    const DEMO: &str = "
# kinematic demo
[scenario]
name = demo
plant = kinematic

[vehicle]
wheelbase = 1.2 m
steer_limit = 35 deg

[route]
start = 0, 0 m
line_to = 10, 0 m
arc_to = 14, 4, 4 m ccw

[controller]
method = lateral
cruise_speed = 1 m/s

[cosim]
duration_cap = 30 s
seed = 7

[design]
axis = speed range 1, 2, 0.2 m/s
axis = delta_cg set 0, 0.1 m
axis = method modes heading, segment
";

    #[test]
    fn parses_demo() {
        let s = parse(DEMO).unwrap();
        assert_eq!(s.name, "demo");
        assert!((s.vehicle.steer_limit - 35f64.to_radians()).abs() < 1e-15);
        assert_eq!(s.route.segments.len(), 2);
        assert_eq!(s.controller.tracker.method, TrackingMethod::LateralError);
        assert_eq!(s.cosim.seed, 7);
        let d = s.design_space.as_ref().unwrap();
        assert_eq!(d.len(), 6 * 2 * 2);
        s.validate().unwrap();
    }

    #[test]
    fn malformed_unit_reports_line() {
        let text = "[vehicle]\nmass = 350 kg\nwheelbase = 1.2 s\n";
        let ScenarioError::Parse(errs) = parse(text).unwrap_err() else { panic!() };
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 3);
        assert!(errs[0].message.contains("unit"));
    }

    #[test]
    fn strictness() {
        for (text, line) in [
            ("[vehicle]\nmas = 350 kg\n", 2),
            ("[vehicles]\n", 1),
            ("mass = 1 kg\n", 1),
            ("[vehicle]\nmass = 350\n", 2),
            ("[vehicle]\nmass = 350 kg\nmass = 300 kg\n", 3),
            ("[load]\nload_mass = 1 kg\n[load]\n", 3),
            ("[route]\nline_to = 1, 0 m\n", 2),
            ("[controller]\nmethod = pid\n", 2),
            ("[design]\naxis = colour set 1, 2\n", 2),
        ] {
            let ScenarioError::Parse(errs) = parse(text).unwrap_err() else { panic!("{text}") };
            assert_eq!(errs[0].line, line, "{text}");
        }
    }

    #[test]
    fn collects_all_errors() {
        let ScenarioError::Parse(errs) = parse("[vehicle]\nmass = x\nfoo = 1\n[bar]\n").unwrap_err() else { panic!() };
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn round_trip_demo_and_feeding() {
        let mut s = parse(DEMO).unwrap();
        let again = parse(&serialize(&s)).unwrap();
        assert_eq!(s, again);

        s.feeding = Some(FeedingLayout { tag_spacing: 7.3, ..Default::default() });
        s.sensors.rfid_front = Some(RfidReaderModel { mount_offset: 1.0, ..Default::default() });
        s.localization.radius = RadiusSource::Static { full_load: 600.0 };
        s.localization.noise.process = ProcessNoise::Fixed(Matrix3::from_diagonal(&Vector3::new(1e-4, 2e-4, 1e-6)));
        s.compression = CompressionModel::linear_table(600.0, 0.02);
        assert!(representable(&s));
        assert_eq!(parse(&serialize(&s)).unwrap(), s);
    }

    proptest! {
        #[test]
        fn round_trip_numbers(mass in 1.0f64..1e4, mu in 0.01f64..1.5, psi in -3.0f64..3.0, seed in any::<u64>(),
                              pitch in 0.01f64..1.0, k in 1e-9f64..1e-3) {
            let mut s = Scenario::default();
            s.vehicle.mass = mass;
            s.vehicle.friction = mu;
            s.initial_offset.psi = psi;
            s.cosim.seed = seed;
            s.compression = CompressionModel::Linear { k };
            s.feeding = Some(FeedingLayout { cage_pitch: pitch, ..Default::default() });
            let text = serialize(&s);
            prop_assert_eq!(parse(&text).unwrap(), s.clone());
            prop_assert_eq!(serialize(&parse(&text).unwrap()), text);
        }
    }
}
