//! Online effective-wheel-radius and speed estimation from two tag readers
//! mounted a known distance apart, plus reader and tag health diagnostics.
//!
//! As the vehicle passes a tag, each reader reports an In and an Out edge.
//! The four reader-to-reader edge pairs span known reference distances, so
//! the encoder counts logged between them give four independent samples of
//! distance per count.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use thiserror::Error;

use crate::plant::{Actuation, CompressionModel, LoadState, Plant, PlantModel, VehicleParams, VehicleState};
use crate::sensors::{
    encoder_sample, stream_rng, Edge, ReaderId, RfidReader, RfidReaderModel, Stream, TagEvent,
};
use crate::world::{LandmarkMap, Pose2D, RfidTag};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("no complete interval with positive counts; estimator unavailable")]
    Unavailable,
    #[error("tag {tag}: {reader:?} reader reported Out before In; pass discarded")]
    EdgeOrder { tag: u32, reader: ReaderId },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("zero elapsed time on a complete interval")]
    ZeroElapsed,
    #[error("encoder log is empty or does not cover t = {0} s")]
    LogCoverage(f64),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

/// Distance travelled for `counts` encoder counts.
pub fn distance_from_counts(counts: f64, counts_per_rev: u32, radius: f64) -> f64 {
    TAU * radius * counts / f64::from(counts_per_rev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Interval {
    /// Leading In to trailing In.
    InIn,
    /// Leading Out to trailing Out.
    OutOut,
    /// Leading In to trailing Out.
    InOut,
    /// Leading Out to trailing In.
    OutIn,
}

impl Interval {
    pub const ALL: [Interval; 4] = [Interval::InIn, Interval::OutOut, Interval::InOut, Interval::OutIn];

    fn edges(self) -> (Edge, Edge) {
        match self {
            Interval::InIn => (Edge::In, Edge::In),
            Interval::OutOut => (Edge::Out, Edge::Out),
            Interval::InOut => (Edge::In, Edge::Out),
            Interval::OutIn => (Edge::Out, Edge::In),
        }
    }
}

/// Front and rear reader mounting. `spacing` is the distance between the
/// zone centres; `front_half` and `rear_half` are the zone semi-axes along the
/// direction of travel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReaderGeometry {
    pub spacing: f64,
    pub front_half: f64,
    pub rear_half: f64,
}

impl ReaderGeometry {
    pub fn symmetric(spacing: f64, half_length: f64) -> Result<Self, CalibrationError> {
        let g = Self { spacing, front_half: half_length, rear_half: half_length };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.spacing > 0.0 && self.front_half > 0.0 && self.rear_half > 0.0) {
            return Err(CalibrationError::InvalidGeometry("spacing and zone lengths must be positive".into()));
        }
        Ok(())
    }

    /// Reference distance for an interval when `leading` meets the tag first.
    pub fn reference(&self, interval: Interval, leading: ReaderId) -> f64 {
        let (lead, trail) = match leading {
            ReaderId::Front => (self.front_half, self.rear_half),
            ReaderId::Rear => (self.rear_half, self.front_half),
        };
        let s = self.spacing;
        match interval {
            Interval::InIn => s + lead - trail,
            Interval::OutOut => s - lead + trail,
            Interval::InOut => s + lead + trail,
            Interval::OutIn => s - lead - trail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSample {
    pub interval: Interval,
    /// Reference distance, m.
    pub distance: f64,
    /// Absolute encoder count delta.
    pub counts: f64,
    pub elapsed: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagPassRecord {
    pub tag_id: u32,
    /// Reader that met the tag first.
    pub leading: ReaderId,
    pub intervals: [IntervalSample; 4],
}

impl TagPassRecord {
    pub fn complete(&self) -> impl Iterator<Item = &IntervalSample> {
        self.intervals.iter().filter(|i| i.complete)
    }

    pub fn is_usable(&self) -> bool {
        self.complete().next().is_some()
    }
}

/// `(time, counts)` samples in time order, linearly interpolated between
/// samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EncoderLog {
    pub samples: Vec<(f64, f64)>,
}

impl EncoderLog {
    pub fn push(&mut self, time: f64, counts: f64) {
        self.samples.push((time, counts));
    }

    pub fn counts_at(&self, time: f64) -> Result<f64, CalibrationError> {
        let s = &self.samples;
        let i = s.partition_point(|(t, _)| *t < time);
        match (s.get(i), i.checked_sub(1).and_then(|j| s.get(j))) {
            (Some(&(t1, c1)), _) if t1 == time => Ok(c1),
            (Some(&(t1, c1)), Some(&(t0, c0))) => Ok(c0 + (c1 - c0) * (time - t0) / (t1 - t0)),
            _ => Err(CalibrationError::LogCoverage(time)),
        }
    }
}

type EdgeTimes = BTreeMap<(ReaderId, Edge), f64>;

fn first_pass_edges(tag: u32, events: &[TagEvent]) -> Result<EdgeTimes, CalibrationError> {
    let mut out = EdgeTimes::new();
    for e in events.iter().filter(|e| e.tag_id == tag) {
        match e.edge {
            Edge::In => {
                out.entry((e.reader, Edge::In)).or_insert(e.time);
            }
            Edge::Out => {
                if !out.contains_key(&(e.reader, Edge::In)) {
                    return Err(CalibrationError::EdgeOrder { tag, reader: e.reader });
                }
                out.entry((e.reader, Edge::Out)).or_insert(e.time);
            }
        }
    }
    Ok(out)
}

/// Pairs the front and rear edges of one tag into the four intervals.
///
/// The travel direction comes from the sign of the encoder change over the
/// pass; when reversing, the rear reader leads. Intervals with a missing
/// edge, or a non-positive reference distance, are flagged incomplete.
pub fn assemble_pass(
    tag_id: u32,
    events: &[TagEvent],
    log: &EncoderLog,
    geometry: &ReaderGeometry,
) -> Result<TagPassRecord, CalibrationError> {
    geometry.validate()?;
    let edges = first_pass_edges(tag_id, events)?;
    let times: Vec<f64> = edges.values().copied().collect();
    let (t_first, t_last) = times
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(*t), hi.max(*t)));
    let leading = if times.len() >= 2 && log.counts_at(t_last)? < log.counts_at(t_first)? {
        ReaderId::Rear
    } else {
        ReaderId::Front
    };
    let trailing = match leading {
        ReaderId::Front => ReaderId::Rear,
        ReaderId::Rear => ReaderId::Front,
    };
    let mut intervals = Interval::ALL.map(|interval| IntervalSample {
        interval,
        distance: geometry.reference(interval, leading),
        counts: 0.0,
        elapsed: 0.0,
        complete: false,
    });
    for sample in &mut intervals {
        let (e0, e1) = sample.interval.edges();
        if let (Some(&t0), Some(&t1)) = (edges.get(&(leading, e0)), edges.get(&(trailing, e1))) {
            sample.counts = (log.counts_at(t1)? - log.counts_at(t0)?).abs();
            sample.elapsed = t1 - t0;
            sample.complete = sample.distance > 0.0 && t1 >= t0;
        }
    }
    Ok(TagPassRecord { tag_id, leading, intervals })
}

/// Least-squares radius over `(distance, counts)` pairs:
/// minimises `sum (d - 2 pi R G / G_o)^2`.
pub fn ls_radius_pairs(pairs: &[(f64, f64)], counts_per_rev: u32) -> Result<f64, CalibrationError> {
    let (num, den) = pairs
        .iter()
        .filter(|(_, g)| *g > 0.0)
        .fold((0.0, 0.0), |(n, d), (dist, g)| (n + dist * g, d + g * g));
    if den == 0.0 {
        return Err(CalibrationError::Unavailable);
    }
    Ok(f64::from(counts_per_rev) * num / (TAU * den))
}

pub fn ls_radius(record: &TagPassRecord, counts_per_rev: u32) -> Result<f64, CalibrationError> {
    let pairs: Vec<_> = record.complete().map(|i| (i.distance, i.counts)).collect();
    ls_radius_pairs(&pairs, counts_per_rev)
}

/// Mean of `distance / elapsed` over the complete intervals.
pub fn tag_speed(record: &TagPassRecord) -> Result<f64, CalibrationError> {
    let complete: Vec<_> = record.complete().collect();
    if complete.is_empty() {
        return Err(CalibrationError::Unavailable);
    }
    if complete.iter().any(|i| i.elapsed <= 0.0) {
        return Err(CalibrationError::ZeroElapsed);
    }
    Ok(complete.iter().map(|i| i.distance / i.elapsed).sum::<f64>() / complete.len() as f64)
}

/// Scalar Kalman filter on the radius, treated as a random walk. Each
/// complete interval is one measurement `d = (2 pi G / G_o) R + noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanRadius {
    pub estimate: f64,
    pub variance: f64,
    /// Random-walk variance added per pass, m^2.
    pub process_variance: f64,
    /// Variance of a reference-distance measurement, m^2.
    pub measurement_variance: f64,
}

impl KalmanRadius {
    pub fn new(initial: f64, variance: f64) -> Self {
        Self { estimate: initial, variance, process_variance: 1e-10, measurement_variance: 1e-6 }
    }

    pub fn update_pass(&mut self, record: &TagPassRecord, counts_per_rev: u32) {
        self.variance += self.process_variance;
        for i in record.complete().filter(|i| i.counts > 0.0) {
            let h = TAU * i.counts / f64::from(counts_per_rev);
            let s = h * h * self.variance + self.measurement_variance;
            let k = self.variance * h / s;
            self.estimate += k * (i.distance - h * self.estimate);
            self.variance *= 1.0 - k * h;
        }
    }
}

/// What the readers reported for one expected tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassObservation {
    pub tag_id: u32,
    pub front_seen: bool,
    pub rear_seen: bool,
    /// Distance between the tag position implied by odometry and its map
    /// position, when available.
    pub position_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HealthConfig {
    /// Consecutive tags seen only by the other reader before a reader is faulty.
    pub faulty_window: usize,
    /// Consecutive passes with no reads before a tag needs replacement.
    pub replace_after: usize,
    pub misplaced_threshold: f64,
}

impl Default for HealthConfig {
    fn default() -> Self {
        Self { faulty_window: 3, replace_after: 2, misplaced_threshold: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Diagnostic {
    ReaderFaulty(ReaderId),
    ReplaceTag(u32),
    MisplacedTag(u32),
}

pub fn reader_health(history: &[PassObservation], cfg: &HealthConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (reader, other) in [(ReaderId::Front, ReaderId::Rear), (ReaderId::Rear, ReaderId::Front)] {
        let seen = |o: &PassObservation, r: ReaderId| match r {
            ReaderId::Front => o.front_seen,
            ReaderId::Rear => o.rear_seen,
        };
        let run = history
            .iter()
            .rev()
            .filter(|o| seen(o, other))
            .take_while(|o| !seen(o, reader))
            .count();
        if cfg.faulty_window > 0 && run >= cfg.faulty_window {
            out.push(Diagnostic::ReaderFaulty(reader));
        }
    }
    let mut per_tag: BTreeMap<u32, Vec<&PassObservation>> = BTreeMap::new();
    for o in history {
        per_tag.entry(o.tag_id).or_default().push(o);
    }
    for (tag, passes) in &per_tag {
        let silent = passes.iter().rev().take_while(|o| !o.front_seen && !o.rear_seen).count();
        if cfg.replace_after > 0 && silent >= cfg.replace_after {
            out.push(Diagnostic::ReplaceTag(*tag));
        }
        let residuals: Vec<f64> = passes.iter().filter_map(|o| o.position_residual).collect();
        if !residuals.is_empty() {
            let mean = residuals.iter().map(|r| r.abs()).sum::<f64>() / residuals.len() as f64;
            if mean > cfg.misplaced_threshold {
                out.push(Diagnostic::MisplacedTag(*tag));
            }
        }
    }
    out
}

/// Straight drive over one tag with a front and a rear reader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSimConfig {
    /// True loaded radius of the rear wheels.
    pub true_radius: f64,
    pub counts_per_rev: u32,
    pub quantized: bool,
    /// Front reader zone centre ahead of the rear reader zone centre.
    pub spacing: f64,
    pub zone_half_length: f64,
    pub zone_half_width: f64,
    /// Rear reader zone centre ahead of the vehicle reference point.
    pub rear_offset: f64,
    pub poll_period: f64,
    /// Initial speed; negative drives backwards.
    pub speed: f64,
    /// Speed change per second.
    pub acceleration: f64,
    pub tag_x: f64,
    pub tag_y: f64,
    pub duration: f64,
    pub ct_step: f64,
}

impl Default for PassSimConfig {
    fn default() -> Self {
        // Commensurate geometry: every zone edge is crossed half a poll
        // distance after a poll instant, so poll quantization cancels out.
        Self {
            true_radius: 0.28,
            counts_per_rev: 1024,
            quantized: false,
            spacing: 1.0,
            zone_half_length: 0.1,
            zone_half_width: 0.05,
            rear_offset: 0.0,
            poll_period: 0.01,
            speed: 0.25,
            acceleration: 0.0,
            tag_x: 2.00125,
            tag_y: 0.0,
            duration: 10.0,
            ct_step: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPass {
    pub events: Vec<TagEvent>,
    pub log: EncoderLog,
    pub geometry: ReaderGeometry,
    /// True speed at every poll instant.
    pub speeds: Vec<f64>,
}

pub const SIM_TAG_ID: u32 = 1;

pub fn simulate_pass(cfg: &PassSimConfig) -> Result<SimulatedPass, CalibrationError> {
    let sim = |e: &dyn std::fmt::Display| CalibrationError::Simulation(e.to_string());
    let params = VehicleParams { wheel_radius: cfg.true_radius, steer_lag: 0.0, drive_lag: 0.0, ..Default::default() };
    let plant = Plant::new(params, LoadState::default(), PlantModel::Kinematic, &CompressionModel::default())
        .map_err(|e| sim(&e))?;
    let zone = |offset| RfidReaderModel {
        mount_offset: offset,
        semi_major: cfg.zone_half_length,
        semi_minor: cfg.zone_half_width,
        poll_period: cfg.poll_period,
    };
    let mut front = RfidReader::new(ReaderId::Front, zone(cfg.rear_offset + cfg.spacing)).map_err(|e| sim(&e))?;
    let mut rear = RfidReader::new(ReaderId::Rear, zone(cfg.rear_offset)).map_err(|e| sim(&e))?;
    let map = LandmarkMap { rfid_tags: vec![RfidTag { id: SIM_TAG_ID, x: cfg.tag_x, y: cfg.tag_y }], ..Default::default() };
    let mut rng = stream_rng(0, Stream::Rfid);

    let substeps = (cfg.poll_period / cfg.ct_step).round().max(1.0) as usize;
    let dt = cfg.poll_period / substeps as f64;
    let polls = (cfg.duration / cfg.poll_period).round() as usize;
    let mut state = VehicleState::at_rest(Pose2D::default());
    let (mut events, mut log, mut speeds) = (Vec::new(), EncoderLog::default(), Vec::new());
    for k in 0..=polls {
        let t = k as f64 * cfg.poll_period;
        let rear_travel = (state.wheel_angle_travel[2] + state.wheel_angle_travel[3]) / 2.0;
        log.push(t, encoder_sample(rear_travel, cfg.counts_per_rev, cfg.quantized));
        events.extend(front.poll(&state.pose, &map, t, &mut rng));
        events.extend(rear.poll(&state.pose, &map, t, &mut rng));
        let act = Actuation { u_o: cfg.speed + cfg.acceleration * t, delta_o: 0.0 };
        speeds.push(act.u_o);
        plant.latch_actuation(&mut state, &act);
        for j in 0..substeps {
            state = plant.step(&state, &act, dt, t + (j + 1) as f64 * dt).map_err(|e| sim(&e))?;
        }
    }
    let geometry = ReaderGeometry::symmetric(cfg.spacing, cfg.zone_half_length)?;
    Ok(SimulatedPass { events, log, geometry, speeds })
}

/// One replayed pass of the calibration demo.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoPass {
    pub speed: f64,
    pub leading: ReaderId,
    pub radius: Result<f64, CalibrationError>,
    pub tag_speed: Result<f64, CalibrationError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDemo {
    pub true_radius: f64,
    pub counts_per_rev: u32,
    pub passes: Vec<DemoPass>,
    /// Radius after feeding every pass through [`KalmanRadius`].
    pub filtered: f64,
    pub diagnostics: Vec<Diagnostic>,
}

/// Replays three simulated tag passes (forward, reversing, forward at half
/// speed) with the scenario's readers, encoder and loaded rear wheels.
pub fn calibration_demo(scenario: &crate::cosim::Scenario) -> Result<CalibrationDemo, CalibrationError> {
    let (Some(front), Some(rear)) = (scenario.sensors.rfid_front, scenario.sensors.rfid_rear) else {
        return Err(CalibrationError::InvalidGeometry("both a front and a rear reader are required".into()));
    };
    let spacing = front.mount_offset - rear.mount_offset;
    let true_radius = crate::plant::effective_wheel_radius(&scenario.vehicle, &scenario.load, &scenario.compression)
        .map_err(|e| CalibrationError::Simulation(e.to_string()))?;
    let encoder = scenario.sensors.encoder;
    let cruise = scenario.controller.cruise_speed.abs();
    if !(cruise > 0.0) || !(spacing > 0.0) {
        return Err(CalibrationError::InvalidGeometry("needs a positive cruise speed and the front reader ahead of the rear".into()));
    }
    let mut filter = KalmanRadius::new(scenario.vehicle.wheel_radius, 1e-4);
    let (mut passes, mut history) = (Vec::new(), Vec::new());
    for speed in [cruise, -cruise, cruise / 2.0] {
        // Place the tag so zone edges fall half a poll distance after a poll.
        let q = speed.abs() * front.poll_period;
        let gap = ((1.0 / q).floor() + 0.5) * q;
        let tag_x = if speed > 0.0 {
            rear.mount_offset + spacing + front.semi_major + gap
        } else {
            rear.mount_offset - front.semi_major - gap
        };
        let cfg = PassSimConfig {
            true_radius,
            counts_per_rev: encoder.counts_per_rev,
            quantized: encoder.quantized,
            spacing,
            zone_half_length: front.semi_major,
            zone_half_width: front.semi_minor,
            rear_offset: rear.mount_offset,
            poll_period: front.poll_period,
            speed,
            acceleration: 0.0,
            tag_x,
            tag_y: 0.0,
            duration: (tag_x.abs() + spacing.abs() + 2.0 * front.semi_major + 1.0) / speed.abs(),
            ct_step: scenario.cosim.ct_step,
        };
        let sim = simulate_pass(&cfg)?;
        let seen = |r: ReaderId| sim.events.iter().any(|e| e.reader == r);
        history.push(PassObservation {
            tag_id: SIM_TAG_ID,
            front_seen: seen(ReaderId::Front),
            rear_seen: seen(ReaderId::Rear),
            position_residual: None,
        });
        let record = assemble_pass(SIM_TAG_ID, &sim.events, &sim.log, &sim.geometry)?;
        filter.update_pass(&record, encoder.counts_per_rev);
        passes.push(DemoPass {
            speed,
            leading: record.leading,
            radius: ls_radius(&record, encoder.counts_per_rev),
            tag_speed: tag_speed(&record),
        });
    }
    Ok(CalibrationDemo {
        true_radius,
        counts_per_rev: encoder.counts_per_rev,
        passes,
        filtered: filter.estimate,
        diagnostics: reader_health(&history, &HealthConfig::default()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_abs_diff_eq!(distance_from_counts(360.0, 360, 0.3), TAU * 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(distance_from_counts(1000.0, 360, 0.3), 5.2360, epsilon = 1e-4);
        let drop = distance_from_counts(360.0, 360, 0.3) - distance_from_counts(360.0, 360, 0.29);
        assert_abs_diff_eq!(drop, 0.0628, epsilon = 1e-4);
    }

    #[test]
    fn reference_distances() {
        let g = ReaderGeometry::symmetric(1.0, 0.1).unwrap();
        let d: Vec<_> = Interval::ALL.iter().map(|i| g.reference(*i, ReaderId::Front)).collect();
        assert_abs_diff_eq!(d[0], 1.0);
        assert_abs_diff_eq!(d[1], 1.0);
        assert_abs_diff_eq!(d[2], 1.2);
        assert_abs_diff_eq!(d[3], 0.8);
    }

    #[test]
    fn clean_pass_has_four_consistent_intervals() {
        let cfg = PassSimConfig { quantized: true, ..Default::default() };
        let pass = simulate_pass(&cfg).unwrap();
        let rec = assemble_pass(SIM_TAG_ID, &pass.events, &pass.log, &pass.geometry).unwrap();
        assert_eq!(rec.leading, ReaderId::Front);
        assert_eq!(rec.complete().count(), 4);
        let per_metre = f64::from(cfg.counts_per_rev) / (TAU * cfg.true_radius);
        for i in &rec.intervals {
            assert!((i.counts - i.distance * per_metre).abs() <= 1.0, "{i:?}");
        }
    }

    #[test]
    fn silent_rear_reader_flags_intervals() {
        let pass = simulate_pass(&PassSimConfig::default()).unwrap();
        let front_only: Vec<_> = pass.events.iter().copied().filter(|e| e.reader == ReaderId::Front).collect();
        let rec = assemble_pass(SIM_TAG_ID, &front_only, &pass.log, &pass.geometry).unwrap();
        assert!(!rec.is_usable());
        assert_eq!(ls_radius(&rec, 1024), Err(CalibrationError::Unavailable));
    }

    #[test]
    fn reversed_pass_has_rear_leading() {
        let cfg = PassSimConfig { speed: -0.25, tag_x: -2.00125 + 1.0, ..Default::default() };
        let pass = simulate_pass(&cfg).unwrap();
        let rec = assemble_pass(SIM_TAG_ID, &pass.events, &pass.log, &pass.geometry).unwrap();
        assert_eq!(rec.leading, ReaderId::Rear);
        assert_eq!(rec.complete().count(), 4);
        assert!((ls_radius(&rec, 1024).unwrap() - cfg.true_radius).abs() < 1e-9);
    }

    #[test]
    fn out_before_in_discards_pass() {
        let events = [TagEvent { tag_id: 4, reader: ReaderId::Rear, edge: Edge::Out, time: 1.0 }];
        let log = EncoderLog { samples: vec![(0.0, 0.0), (2.0, 10.0)] };
        let g = ReaderGeometry::symmetric(1.0, 0.1).unwrap();
        assert!(matches!(assemble_pass(4, &events, &log, &g), Err(CalibrationError::EdgeOrder { .. })));
    }

    fn record(pairs: &[(f64, f64, f64)]) -> TagPassRecord {
        let mut intervals = Interval::ALL.map(|interval| IntervalSample { interval, distance: 0.0, counts: 0.0, elapsed: 0.0, complete: false });
        for (slot, &(d, g, t)) in intervals.iter_mut().zip(pairs) {
            *slot = IntervalSample { distance: d, counts: g, elapsed: t, complete: true, ..*slot };
        }
        TagPassRecord { tag_id: 0, leading: ReaderId::Front, intervals }
    }

    #[test]
    fn exact_fit_and_single_interval() {
        let r = 0.3;
        let g = |d: f64| d * 1024.0 / (TAU * r);
        let rec = record(&[(1.0, g(1.0), 4.0), (1.2, g(1.2), 4.8), (0.8, g(0.8), 3.2)]);
        assert_abs_diff_eq!(ls_radius(&rec, 1024).unwrap(), r, epsilon = 1e-12);
        let single = record(&[(1.0, 500.0, 4.0)]);
        assert_abs_diff_eq!(ls_radius(&single, 1024).unwrap(), 1024.0 / (TAU * 500.0), epsilon = 1e-16);
    }

    #[test]
    fn tag_speed_examples() {
        assert_abs_diff_eq!(tag_speed(&record(&[(1.0, 100.0, 4.0)])).unwrap(), 0.25);
        assert_eq!(tag_speed(&record(&[(1.0, 100.0, 0.0)])), Err(CalibrationError::ZeroElapsed));
        let cfg = PassSimConfig::default();
        let pass = simulate_pass(&cfg).unwrap();
        let rec = assemble_pass(SIM_TAG_ID, &pass.events, &pass.log, &pass.geometry).unwrap();
        let u = tag_speed(&rec).unwrap();
        let bound = cfg.spacing * cfg.poll_period / (cfg.spacing / cfg.speed);
        assert!((u - 0.25).abs() <= bound, "{u}");
    }

    #[test]
    fn accelerating_pass_speed_is_bracketed() {
        let cfg = PassSimConfig { speed: 0.15, acceleration: 0.02, ..Default::default() };
        let pass = simulate_pass(&cfg).unwrap();
        let rec = assemble_pass(SIM_TAG_ID, &pass.events, &pass.log, &pass.geometry).unwrap();
        let u = tag_speed(&rec).unwrap();
        let t0 = pass.events.first().unwrap().time;
        let t1 = pass.events.last().unwrap().time;
        let at = |t: f64| cfg.speed + cfg.acceleration * t;
        assert!(u >= at(t0) && u <= at(t1), "{u} not in [{}, {}]", at(t0), at(t1));
    }

    #[test]
    fn kalman_converges_to_true_radius() {
        let cfg = PassSimConfig { true_radius: 0.29, ..Default::default() };
        let pass = simulate_pass(&cfg).unwrap();
        let rec = assemble_pass(SIM_TAG_ID, &pass.events, &pass.log, &pass.geometry).unwrap();
        let mut k = KalmanRadius::new(0.30, 1e-4);
        for _ in 0..5 {
            k.update_pass(&rec, cfg.counts_per_rev);
        }
        assert!((k.estimate - 0.29).abs() < 1e-4, "{}", k.estimate);
    }

    fn obs(tag: u32, front: bool, rear: bool) -> PassObservation {
        PassObservation { tag_id: tag, front_seen: front, rear_seen: rear, position_residual: None }
    }

    #[test]
    fn health_examples() {
        let cfg = HealthConfig::default();
        let silent_rear = [obs(1, true, false), obs(2, true, false), obs(3, true, false)];
        assert_eq!(reader_health(&silent_rear, &cfg), vec![Diagnostic::ReaderFaulty(ReaderId::Rear)]);
        let lost = [obs(5, true, true), obs(5, false, false), obs(6, true, true), obs(5, false, false)];
        assert_eq!(reader_health(&lost, &cfg), vec![Diagnostic::ReplaceTag(5)]);
        let fine = [obs(1, true, true), obs(2, true, true)];
        assert!(reader_health(&fine, &cfg).is_empty());
        let shifted = [PassObservation { position_residual: Some(0.2), ..obs(8, true, true) }];
        assert_eq!(reader_health(&shifted, &cfg), vec![Diagnostic::MisplacedTag(8)]);
    }

    proptest! {
        #[test]
        fn ls_radius_properties(pairs in proptest::collection::vec((0.1f64..3.0, 10.0f64..5000.0), 1..5), scale in 0.5f64..4.0) {
            let r = ls_radius_pairs(&pairs, 1024).unwrap();
            let direct: Vec<f64> = pairs.iter().map(|(d, g)| ls_radius_pairs(&[(*d, *g)], 1024).unwrap()).collect();
            let lo = direct.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = direct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
            let scaled: Vec<_> = pairs.iter().map(|(d, g)| (d * scale, g * scale)).collect();
            prop_assert!((ls_radius_pairs(&scaled, 1024).unwrap() - r).abs() <= 1e-12 * r);
            let single = ls_radius_pairs(&pairs[..1], 1024).unwrap();
            let closed = pairs[0].0 * 1024.0 / (TAU * pairs[0].1);
            prop_assert!((single - closed).abs() <= 4.0 * f64::EPSILON * closed);
        }
    }
}
