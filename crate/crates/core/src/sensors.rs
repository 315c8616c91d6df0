//! Simulated sensor suite: wheel encoders, IMU yaw rate, feature-level vision
//! and RFID detection-zone events.
//!
//! Every stochastic sensor draws from its own [`ChaCha8Rng`] stream derived
//! from one global seed, so adding or removing a sensor never perturbs the
//! samples of another.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::world::{wrap_angle, LandmarkMap, Pose2D, WallLine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate wall line (A = B = 0)")]
    DegenerateWall,
}

/// Fixed stream offsets for the per-sensor random generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Imu = 1,
    Vision = 2,
    Rfid = 3,
    Localization = 4,
    Calibration = 5,
    Environment = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Zero-mean Gaussian sample; `sigma == 0` returns exactly zero without
/// consuming randomness, so noiseless runs are exact.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderModel {
    pub counts_per_rev: u32,
    pub quantized: bool,
}

impl Default for EncoderModel {
    fn default() -> Self {
        Self { counts_per_rev: 1024, quantized: true }
    }
}

impl EncoderModel {
    pub fn new(counts_per_rev: u32, quantized: bool) -> Result<Self, SensorError> {
        if counts_per_rev == 0 {
            return Err(SensorError::InvalidConfig("counts_per_rev must be at least 1".into()));
        }
        Ok(Self { counts_per_rev, quantized })
    }

    pub fn sample(&self, wheel_angle_travel: f64) -> f64 {
        encoder_sample(wheel_angle_travel, self.counts_per_rev, self.quantized)
    }
}

/// Encoder counts for an accumulated wheel rotation.
pub fn encoder_sample(wheel_angle_travel: f64, counts_per_rev: u32, quantized: bool) -> f64 {
    let exact = wheel_angle_travel / TAU * f64::from(counts_per_rev);
    if quantized {
        exact.floor()
    } else {
        exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuModel {
    pub yaw_rate_sigma: f64,
    pub bias: f64,
}

impl ImuModel {
    pub fn sample<R: Rng + ?Sized>(&self, true_yaw_rate: f64, rng: &mut R) -> f64 {
        true_yaw_rate + self.bias + gaussian(rng, self.yaw_rate_sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionModel {
    pub max_range: f64,
    pub field_of_view: f64,
    pub range_sigma: f64,
    pub bearing_sigma: f64,
    /// 1-sigma accuracy of the sidewall distance.
    pub sidewall_distance_sigma: f64,
    /// Constant offset on the sidewall distance.
    pub sidewall_distance_bias: f64,
    pub sidewall_angle_sigma: f64,
}

impl Default for VisionModel {
    fn default() -> Self {
        Self {
            max_range: 5.0,
            field_of_view: 120f64.to_radians(),
            range_sigma: 0.0,
            bearing_sigma: 0.0,
            sidewall_distance_sigma: 0.0,
            sidewall_distance_bias: 0.0,
            sidewall_angle_sigma: 0.0,
        }
    }
}

impl VisionModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.max_range > 0.0) {
            return Err(SensorError::InvalidConfig("vision max_range must be positive".into()));
        }
        if !(self.field_of_view > 0.0 && self.field_of_view <= TAU) {
            return Err(SensorError::InvalidConfig("vision field_of_view must be in (0, 2pi]".into()));
        }
        let sigmas = [self.range_sigma, self.bearing_sigma, self.sidewall_distance_sigma, self.sidewall_angle_sigma];
        if sigmas.iter().any(|s| *s < 0.0) {
            return Err(SensorError::InvalidConfig("vision noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleObservation {
    pub range: f64,
    pub bearing: f64,
    /// Ground-truth index into the map's pole list.
    pub landmark: usize,
}

/// Noiseless polar measurement of a point landmark.
pub fn pole_measurement(pose: &Pose2D, mx: f64, my: f64) -> (f64, f64) {
    let (dx, dy) = (mx - pose.x, my - pose.y);
    (dx.hypot(dy), wrap_angle(dy.atan2(dx) - pose.psi))
}

pub fn vision_poles<R: Rng + ?Sized>(
    pose: &Pose2D,
    map: &LandmarkMap,
    model: &VisionModel,
    rng: &mut R,
) -> Vec<PoleObservation> {
    let half_fov = model.field_of_view / 2.0;
    map.poles
        .iter()
        .enumerate()
        .filter_map(|(i, pole)| {
            let (range, bearing) = pole_measurement(pose, pole.x, pole.y);
            let visible = range <= model.max_range && (model.field_of_view >= TAU || bearing.abs() <= half_fov);
            visible.then(|| PoleObservation {
                range: range + gaussian(rng, model.range_sigma),
                bearing: wrap_angle(bearing + gaussian(rng, model.bearing_sigma)),
                landmark: i,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidewallObservation {
    pub distance: f64,
    pub angle: f64,
}

/// Noiseless sidewall measurement with the `A·y + B·x + C` coefficient order.
pub fn sidewall_measurement(pose: &Pose2D, wall: &WallLine) -> Result<(f64, f64), SensorError> {
    if !wall.is_valid() {
        return Err(SensorError::DegenerateWall);
    }
    Ok((wall.signed_distance(pose.x, pose.y), wrap_angle(wall.normal_angle() - pose.psi)))
}

pub fn vision_sidewall<R: Rng + ?Sized>(
    pose: &Pose2D,
    wall: &WallLine,
    model: &VisionModel,
    rng: &mut R,
) -> Result<SidewallObservation, SensorError> {
    let (d, theta) = sidewall_measurement(pose, wall)?;
    Ok(SidewallObservation {
        distance: d + model.sidewall_distance_bias + gaussian(rng, model.sidewall_distance_sigma),
        angle: wrap_angle(theta + gaussian(rng, model.sidewall_angle_sigma)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReaderId {
    Front,
    Rear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Edge {
    In,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagEvent {
    pub tag_id: u32,
    pub reader: ReaderId,
    pub edge: Edge,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfidReaderModel {
    /// Signed offset of the zone centre along the vehicle's longitudinal axis.
    pub mount_offset: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub poll_period: f64,
}

impl Default for RfidReaderModel {
    fn default() -> Self {
        Self { mount_offset: 0.0, semi_major: 0.1, semi_minor: 0.1, poll_period: 0.01 }
    }
}

impl RfidReaderModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.semi_major > 0.0 && self.semi_minor > 0.0) {
            return Err(SensorError::InvalidConfig("RFID zone semi-axes must be positive".into()));
        }
        if !(self.poll_period > 0.0) {
            return Err(SensorError::InvalidConfig("RFID poll_period must be positive".into()));
        }
        Ok(())
    }

    pub fn zone_centre(&self, pose: &Pose2D) -> (f64, f64) {
        let (s, c) = pose.psi.sin_cos();
        (pose.x + self.mount_offset * c, pose.y + self.mount_offset * s)
    }

    /// True when the tag lies in the elliptical zone fixed in the vehicle frame.
    pub fn contains(&self, pose: &Pose2D, tx: f64, ty: f64) -> bool {
        let (cx, cy) = self.zone_centre(pose);
        let (s, c) = pose.psi.sin_cos();
        let (dx, dy) = (tx - cx, ty - cy);
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        (along / self.semi_major).powi(2) + (across / self.semi_minor).powi(2) <= 1.0
    }
}

/// Edge-detecting RFID reader. Call [`RfidReader::poll`] at every poll
/// instant; it latches which tags are inside the zone and reports transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RfidReader {
    pub id: ReaderId,
    pub model: RfidReaderModel,
    inside: BTreeSet<u32>,
    /// Probability that a poll misses a tag that is inside the zone.
    pub dropout: f64,
}

impl RfidReader {
    pub fn new(id: ReaderId, model: RfidReaderModel) -> Result<Self, SensorError> {
        model.validate()?;
        Ok(Self { id, model, inside: BTreeSet::new(), dropout: 0.0 })
    }

    pub fn poll<R: Rng + ?Sized>(&mut self, pose: &Pose2D, map: &LandmarkMap, time: f64, rng: &mut R) -> Vec<TagEvent> {
        let mut events = Vec::new();
        for tag in &map.rfid_tags {
            let present = self.model.contains(pose, tag.x, tag.y);
            let read = present && (self.dropout <= 0.0 || rng.random::<f64>() >= self.dropout);
            let latched = self.inside.contains(&tag.id);
            let edge = match (latched, read, present) {
                (false, true, _) => Some(Edge::In),
                (true, _, false) => Some(Edge::Out),
                _ => None,
            };
            if let Some(edge) = edge {
                match edge {
                    Edge::In => self.inside.insert(tag.id),
                    Edge::Out => self.inside.remove(&tag.id),
                };
                events.push(TagEvent { tag_id: tag.id, reader: self.id, edge, time });
            }
        }
        events
    }

    pub fn reset(&mut self) {
        self.inside.clear();
    }
}

/// Checks that every `(tag, reader)` pair alternates In/Out starting with In
/// and that times never decrease per reader.
pub fn events_well_ordered(events: &[TagEvent]) -> bool {
    use std::collections::BTreeMap;
    let mut state: BTreeMap<(u32, ReaderId), Edge> = BTreeMap::new();
    let mut last_time: BTreeMap<ReaderId, f64> = BTreeMap::new();
    for e in events {
        if let Some(t) = last_time.get(&e.reader) {
            if e.time < *t {
                return false;
            }
        }
        last_time.insert(e.reader, e.time);
        let expected = match state.get(&(e.tag_id, e.reader)) {
            None | Some(Edge::Out) => Edge::In,
            Some(Edge::In) => Edge::Out,
        };
        if e.edge != expected {
            return false;
        }
        state.insert((e.tag_id, e.reader), e.edge);
    }
    true
}
