//! Discrete-event controller: waypoint sequencing, path tracking and the
//! feeding sequencer.

use std::collections::VecDeque;

use thiserror::Error;

use crate::world::{wrap_angle, Pose2D, Waypoint};

pub const MIN_CHORD: f64 = 1e-6;
pub const MIN_GRAMS: f64 = 80.0;
pub const MAX_GRAMS: f64 = 300.0;
/// Speed limit for the feeding robot profile.
pub const FEED_SPEED_CAP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("route exhausted: next_waypoint needs more than one remaining waypoint")]
    RouteExhausted,
    #[error("degenerate segment of length {0} m")]
    DegenerateChord(f64),
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid feed plan: {0}")]
    InvalidPlan(String),
}

/// Ordered waypoint queue. `current` is the waypoint most recently handed
/// out and `next` the one the vehicle is heading for.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteManager {
    remaining: VecDeque<Waypoint>,
    current: Option<Waypoint>,
}

impl RouteManager {
    pub fn new(waypoints: impl IntoIterator<Item = Waypoint>) -> Self {
        Self { remaining: waypoints.into_iter().collect(), current: None }
    }

    pub fn next_waypoint(&mut self) -> Result<Waypoint, ControllerError> {
        if self.remaining.len() <= 1 {
            return Err(ControllerError::RouteExhausted);
        }
        let head = self.remaining.pop_front().ok_or(ControllerError::RouteExhausted)?;
        self.current = Some(head);
        Ok(head)
    }

    pub fn current(&self) -> Option<Waypoint> {
        self.current
    }

    pub fn next(&self) -> Option<Waypoint> {
        self.current.and(self.remaining.front().copied())
    }

    pub fn remaining(&self) -> impl Iterator<Item = &Waypoint> {
        self.remaining.iter()
    }

    pub fn remaining_len(&self) -> usize {
        self.remaining.len()
    }

    /// True when `next` is the final waypoint of the route.
    pub fn on_last_segment(&self) -> bool {
        self.current.is_some() && self.remaining.len() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackingMethod {
    /// Steer on the bearing error to a single waypoint.
    #[default]
    HeadingError,
    /// Steer on the lateral offset from the chord between two waypoints.
    LateralError,
    /// Pure pursuit of a carrot point on the current segment.
    LineSegment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub method: TrackingMethod,
    pub look_ahead: f64,
    pub gain_heading: f64,
    /// rad of steer per metre of lateral offset.
    pub gain_lateral: f64,
    pub max_steer: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            method: TrackingMethod::HeadingError,
            look_ahead: 1.5,
            gain_heading: 1.0,
            gain_lateral: 0.5,
            max_steer: 35f64.to_radians(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.look_ahead > 0.0) {
            return Err(ControllerError::InvalidConfig("look_ahead must be positive".into()));
        }
        if !(self.gain_heading > 0.0 && self.gain_lateral > 0.0) {
            return Err(ControllerError::InvalidConfig("gains must be positive".into()));
        }
        if !(self.max_steer > 0.0) {
            return Err(ControllerError::InvalidConfig("max_steer must be positive".into()));
        }
        Ok(())
    }

    fn clamp(&self, delta: f64) -> f64 {
        delta.clamp(-self.max_steer, self.max_steer)
    }
}

struct Chord {
    origin: Waypoint,
    dir: (f64, f64),
    length: f64,
}

impl Chord {
    fn new(from: Waypoint, to: Waypoint) -> Result<Self, ControllerError> {
        let (dx, dy) = (to.x - from.x, to.y - from.y);
        let length = dx.hypot(dy);
        if length < MIN_CHORD {
            return Err(ControllerError::DegenerateChord(length));
        }
        Ok(Self { origin: from, dir: (dx / length, dy / length), length })
    }

    fn heading(&self) -> f64 {
        self.dir.1.atan2(self.dir.0)
    }

    /// (along-track, signed lateral) coordinates; lateral is positive left.
    fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = (x - self.origin.x, y - self.origin.y);
        (px * self.dir.0 + py * self.dir.1, self.dir.0 * py - self.dir.1 * px)
    }

    fn point(&self, s: f64) -> (f64, f64) {
        (self.origin.x + s * self.dir.0, self.origin.y + s * self.dir.1)
    }
}

/// Whether the tracker should move on to the following waypoint.
///
/// Methods 1 and 2 switch once the target waypoint is within the look-ahead
/// distance. Method 3 switches once the along-track projection passes the
/// segment length minus the look-ahead.
pub fn advance_check(pose: &Pose2D, mgr: &RouteManager, cfg: &TrackerConfig) -> bool {
    let (Some(from), Some(to)) = (mgr.current(), mgr.next()) else {
        return false;
    };
    match cfg.method {
        TrackingMethod::HeadingError | TrackingMethod::LateralError => {
            (to.x - pose.x).hypot(to.y - pose.y) <= cfg.look_ahead
        }
        TrackingMethod::LineSegment => match Chord::new(from, to) {
            Ok(chord) => chord.project(pose.x, pose.y).0 >= chord.length - cfg.look_ahead,
            Err(_) => true,
        },
    }
}

pub fn steer_method1(pose: &Pose2D, target: Waypoint, cfg: &TrackerConfig) -> f64 {
    let bearing = (target.y - pose.y).atan2(target.x - pose.x);
    cfg.clamp(cfg.gain_heading * wrap_angle(bearing - pose.psi))
}

pub fn steer_method2(pose: &Pose2D, from: Waypoint, to: Waypoint, cfg: &TrackerConfig) -> Result<f64, ControllerError> {
    let chord = Chord::new(from, to)?;
    let (_, lateral) = chord.project(pose.x, pose.y);
    let heading_error = wrap_angle(chord.heading() - pose.psi);
    Ok(cfg.clamp(-cfg.gain_lateral * lateral + cfg.gain_heading * heading_error))
}

pub fn steer_method3(pose: &Pose2D, from: Waypoint, to: Waypoint, cfg: &TrackerConfig) -> Result<f64, ControllerError> {
    let chord = Chord::new(from, to)?;
    let (along, _) = chord.project(pose.x, pose.y);
    let (cx, cy) = chord.point((along + cfg.look_ahead).clamp(0.0, chord.length));
    let bearing = (cy - pose.y).atan2(cx - pose.x);
    Ok(cfg.clamp(cfg.gain_heading * wrap_angle(bearing - pose.psi)))
}

/// Steering command for the configured method.
pub fn steer(pose: &Pose2D, mgr: &RouteManager, cfg: &TrackerConfig) -> Result<f64, ControllerError> {
    let (from, to) = match (mgr.current(), mgr.next()) {
        (Some(f), Some(t)) => (f, t),
        _ => return Err(ControllerError::RouteExhausted),
    };
    match cfg.method {
        TrackingMethod::HeadingError => Ok(steer_method1(pose, to, cfg)),
        TrackingMethod::LateralError => steer_method2(pose, from, to, cfg),
        TrackingMethod::LineSegment => steer_method3(pose, from, to, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    /// Position along the wall direction.
    pub position: f64,
    pub grams: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedPlan {
    pub placements: Vec<Placement>,
    pub half_tolerance: f64,
    /// Along-wall position where the robot stops to deploy the arm.
    pub area_start: f64,
    /// Along-wall position where feeding ends.
    pub area_end: f64,
    pub feed_speed: f64,
    pub deploy_time: f64,
}

impl Default for FeedPlan {
    fn default() -> Self {
        Self {
            placements: Vec::new(),
            half_tolerance: 0.08,
            area_start: 0.0,
            area_end: 0.0,
            feed_speed: FEED_SPEED_CAP,
            deploy_time: 5.0,
        }
    }
}

impl FeedPlan {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if let Some(p) = self.placements.iter().find(|p| !(MIN_GRAMS..=MAX_GRAMS).contains(&p.grams)) {
            return Err(ControllerError::InvalidPlan(format!("{} g outside [80, 300] g", p.grams)));
        }
        if self.placements.windows(2).any(|w| w[1].position <= w[0].position) {
            return Err(ControllerError::InvalidPlan("placement positions must strictly increase".into()));
        }
        if !(self.half_tolerance > 0.0) {
            return Err(ControllerError::InvalidPlan("half_tolerance must be positive".into()));
        }
        if !(self.feed_speed > 0.0 && self.feed_speed <= FEED_SPEED_CAP) {
            return Err(ControllerError::InvalidPlan(format!("feed speed must be in (0, {FEED_SPEED_CAP}] m/s")));
        }
        if self.deploy_time < 0.0 || self.area_end < self.area_start {
            return Err(ControllerError::InvalidPlan("deploy time or feeding area bounds invalid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeedPhase {
    Transit,
    StopDeploy { since: f64 },
    Feeding,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dispense {
    pub index: usize,
    pub grams: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedSequencer {
    pub plan: FeedPlan,
    pub phase: FeedPhase,
    next: usize,
    pub dispensed: Vec<usize>,
    /// Placements passed without dispensing.
    pub missed: Vec<usize>,
}

/// Speed below which the robot counts as stopped for arm deployment.
const STOPPED_SPEED: f64 = 0.005;

impl FeedSequencer {
    pub fn new(plan: FeedPlan) -> Result<Self, ControllerError> {
        plan.validate()?;
        Ok(Self { plan, phase: FeedPhase::Transit, next: 0, dispensed: Vec::new(), missed: Vec::new() })
    }

    /// Advances the sequencer with the estimated along-wall position and
    /// speed. Returns the commanded speed and an optional dispense.
    ///
    /// A placement is dispensed on the first step whose estimate reaches it;
    /// if the estimate is already past the tolerance window it is a miss.
    pub fn step(&mut self, along: f64, speed: f64, time: f64) -> (f64, Option<Dispense>) {
        let plan = &self.plan;
        match self.phase {
            FeedPhase::Transit => {
                if along >= plan.area_start {
                    self.phase = FeedPhase::StopDeploy { since: time };
                    return (0.0, None);
                }
                (plan.feed_speed, None)
            }
            FeedPhase::StopDeploy { since } => {
                if speed.abs() > STOPPED_SPEED {
                    self.phase = FeedPhase::StopDeploy { since: time };
                } else if time - since >= plan.deploy_time {
                    self.phase = FeedPhase::Feeding;
                    return self.step(along, speed, time);
                }
                (0.0, None)
            }
            FeedPhase::Feeding => {
                let mut out = None;
                while let Some(p) = plan.placements.get(self.next) {
                    if along > p.position + plan.half_tolerance {
                        self.missed.push(self.next);
                        self.next += 1;
                    } else if along >= p.position {
                        out = Some(Dispense { index: self.next, grams: p.grams });
                        self.dispensed.push(self.next);
                        self.next += 1;
                        break;
                    } else {
                        break;
                    }
                }
                if self.next >= plan.placements.len() && along >= plan.area_end {
                    self.phase = FeedPhase::Done;
                    return (0.0, out);
                }
                (plan.feed_speed, out)
            }
            FeedPhase::Done => (0.0, None),
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == FeedPhase::Done
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    pub u_o: f64,
    pub delta_o: f64,
    pub dispense: Option<Dispense>,
}

/// Monitored values handed to the controller each period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Monitored {
    pub pose: Pose2D,
    pub yaw_rate: f64,
    pub speed: f64,
    /// Estimated along-wall position, when a feeding wall is configured.
    pub along: Option<f64>,
}

/// Route-following controller with an optional feeding sequencer.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub tracker: TrackerConfig,
    pub route: RouteManager,
    pub cruise_speed: f64,
    pub speed_cap: f64,
    pub feed: Option<FeedSequencer>,
    complete: bool,
}

impl Controller {
    pub fn new(
        tracker: TrackerConfig,
        waypoints: Vec<Waypoint>,
        cruise_speed: f64,
        speed_cap: f64,
        feed: Option<FeedPlan>,
    ) -> Result<Self, ControllerError> {
        tracker.validate()?;
        if !(cruise_speed >= 0.0 && cruise_speed <= speed_cap) {
            return Err(ControllerError::InvalidConfig(format!(
                "cruise speed {cruise_speed} m/s outside [0, {speed_cap}]"
            )));
        }
        let mut route = RouteManager::new(waypoints);
        route.next_waypoint()?;
        let feed = feed.map(FeedSequencer::new).transpose()?;
        Ok(Self { tracker, route, cruise_speed, speed_cap, feed, complete: false })
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn step(&mut self, m: &Monitored, time: f64) -> Result<ControlOutput, ControllerError> {
        if self.complete {
            return Ok(ControlOutput::default());
        }
        while advance_check(&m.pose, &self.route, &self.tracker) {
            if self.route.on_last_segment() {
                if self.feed.is_none() {
                    self.complete = true;
                    return Ok(ControlOutput::default());
                }
                break;
            }
            self.route.next_waypoint()?;
        }
        let delta_o = steer(&m.pose, &self.route, &self.tracker)?;
        let (mut u_o, mut dispense) = (self.cruise_speed, None);
        if let Some(seq) = self.feed.as_mut() {
            let (speed, d) = seq.step(m.along.unwrap_or(f64::NEG_INFINITY), m.speed, time);
            u_o = speed;
            dispense = d;
            if seq.is_done() {
                self.complete = true;
            }
        }
        Ok(ControlOutput { u_o: u_o.clamp(0.0, self.speed_cap), delta_o, dispense })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::kinematic_derivative;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn wp(x: f64, y: f64) -> Waypoint {
        Waypoint { x, y }
    }

    #[test]
    fn route_manager_sequence() {
        let mut m = RouteManager::new([wp(1.0, 0.0), wp(2.0, 0.0), wp(3.0, 0.0)]);
        assert_eq!(m.next_waypoint().unwrap(), wp(1.0, 0.0));
        assert_eq!(m.current(), Some(wp(1.0, 0.0)));
        assert_eq!(m.next(), Some(wp(2.0, 0.0)));
        assert_eq!(m.remaining().copied().collect::<Vec<_>>(), vec![wp(2.0, 0.0), wp(3.0, 0.0)]);

        let mut m = RouteManager::new([wp(1.0, 0.0), wp(2.0, 0.0)]);
        assert_eq!(m.next_waypoint().unwrap(), wp(1.0, 0.0));
        assert_eq!(m.remaining_len(), 1);
        assert_eq!(m.next_waypoint(), Err(ControllerError::RouteExhausted));

        let mut m = RouteManager::new([wp(1.0, 0.0)]);
        assert_eq!(m.next_waypoint(), Err(ControllerError::RouteExhausted));
    }

    fn manager(a: Waypoint, b: Waypoint) -> RouteManager {
        let mut m = RouteManager::new([a, b]);
        m.next_waypoint().unwrap();
        m
    }

    #[test]
    fn advance_examples() {
        let cfg = TrackerConfig { look_ahead: 1.0, ..Default::default() };
        let m = manager(wp(0.0, 0.0), wp(10.0, 0.0));
        assert!(advance_check(&Pose2D::new(10.0, 0.0, 0.0), &m, &cfg));
        assert!(!advance_check(&Pose2D::new(8.0, 0.0, 0.0), &m, &cfg));
        let seg = TrackerConfig { method: TrackingMethod::LineSegment, ..cfg };
        assert!(advance_check(&Pose2D::new(9.0, 2.0, 0.0), &m, &seg));
        assert!(!advance_check(&Pose2D::new(8.5, 2.0, 0.0), &m, &seg));
    }

    #[test]
    fn method1_examples() {
        let cfg = TrackerConfig { gain_heading: 1.0, max_steer: 0.6, ..Default::default() };
        assert_eq!(steer_method1(&Pose2D::default(), wp(5.0, 0.0), &cfg), 0.0);
        assert_eq!(steer_method1(&Pose2D::default(), wp(0.0, 5.0), &cfg), 0.6);
        let wide = TrackerConfig { max_steer: FRAC_PI_2, ..cfg };
        assert_abs_diff_eq!(steer_method1(&Pose2D::default(), wp(0.0, 5.0), &wide), FRAC_PI_2, epsilon = 1e-15);
        let l = steer_method1(&Pose2D::default(), wp(3.0, 1.0), &cfg);
        let r = steer_method1(&Pose2D::default(), wp(3.0, -1.0), &cfg);
        assert_eq!(l, -r);
    }

    #[test]
    fn method2_examples() {
        let cfg = TrackerConfig::default();
        let (a, b) = (wp(0.0, 0.0), wp(10.0, 0.0));
        assert_eq!(steer_method2(&Pose2D::new(3.0, 0.0, 0.0), a, b, &cfg).unwrap(), 0.0);
        assert!(steer_method2(&Pose2D::new(3.0, 0.4, 0.0), a, b, &cfg).unwrap() < 0.0);
        assert!(matches!(steer_method2(&Pose2D::default(), a, a, &cfg), Err(ControllerError::DegenerateChord(_))));
    }

    #[test]
    fn method3_examples() {
        let cfg = TrackerConfig { look_ahead: 1.5, gain_heading: 0.8, ..Default::default() };
        let (a, b) = (wp(0.0, 0.0), wp(10.0, 0.0));
        assert_eq!(steer_method3(&Pose2D::new(2.0, 0.0, 0.0), a, b, &cfg).unwrap(), 0.0);
        let d = 0.3;
        let got = steer_method3(&Pose2D::new(2.0, d, 0.0), a, b, &cfg).unwrap();
        assert_abs_diff_eq!(got, 0.8 * (-d).atan2(1.5), epsilon = 1e-15);
        assert!(steer_method3(&Pose2D::default(), b, b, &cfg).is_err());
    }

    /// Closed-loop kinematic run on the x axis; returns |lateral offset| per step.
    fn closed_loop(method: TrackingMethod, offset: f64) -> Vec<f64> {
        let cfg = TrackerConfig { method, ..Default::default() };
        let (a, b) = (wp(0.0, 0.0), wp(200.0, 0.0));
        let (u, l, dt) = (1.0, 1.2, 0.02);
        let mut pose = Pose2D::new(0.0, offset, 0.0);
        let mut out = Vec::new();
        for _ in 0..3000 {
            let delta = match method {
                TrackingMethod::LateralError => steer_method2(&pose, a, b, &cfg).unwrap(),
                _ => steer_method3(&pose, a, b, &cfg).unwrap(),
            };
            let k = kinematic_derivative(&pose, u, delta, l).unwrap();
            pose = Pose2D::new(pose.x + k[0] * dt, pose.y + k[1] * dt, pose.psi + k[2] * dt);
            out.push(pose.y.abs());
        }
        out
    }

    fn settles(trace: &[f64], tol: f64) -> bool {
        match trace.iter().position(|e| *e < tol) {
            Some(i) => trace[i..].iter().all(|e| *e < tol),
            None => false,
        }
    }

    #[test]
    fn method2_converges_from_half_metre() {
        assert!(settles(&closed_loop(TrackingMethod::LateralError, 0.5), 0.05));
    }

    #[test]
    fn method3_converges_from_offset() {
        assert!(settles(&closed_loop(TrackingMethod::LineSegment, 0.3), 0.05));
    }

    fn plan(positions: &[f64]) -> FeedPlan {
        FeedPlan {
            placements: positions.iter().map(|&p| Placement { position: p, grams: 150.0 }).collect(),
            area_start: 0.0,
            area_end: positions.last().copied().unwrap_or(0.0) + 0.2,
            deploy_time: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(&[1.0, 2.0]);
        assert!(p.validate().is_ok());
        p.placements[0].grams = 50.0;
        assert!(p.validate().is_err());
        assert!(plan(&[2.0, 1.0]).validate().is_err());
    }

    #[test]
    fn dispense_once_at_placement() {
        let mut s = FeedSequencer::new(plan(&[1.0])).unwrap();
        s.step(0.0, 0.0, 0.0);
        s.step(0.0, 0.0, 0.1);
        assert_eq!(s.phase, FeedPhase::Feeding);
        let (_, d) = s.step(1.0, 0.25, 1.0);
        assert_eq!(d, Some(Dispense { index: 0, grams: 150.0 }));
        assert_eq!(s.step(1.0, 0.25, 1.02).1, None);
    }

    #[test]
    fn sequential_dispenses_in_order() {
        let mut s = FeedSequencer::new(plan(&[0.5, 0.8])).unwrap();
        let mut order = Vec::new();
        let mut x = 0.0;
        for k in 0..400 {
            let (u, d) = s.step(x, 0.0, k as f64 * 0.02);
            order.extend(d.map(|d| d.index));
            x += u * 0.02;
        }
        assert_eq!(order, vec![0, 1]);
        assert!(s.is_done());
        assert!(s.missed.is_empty());
    }

    #[test]
    fn jumping_past_window_is_a_miss() {
        let mut s = FeedSequencer::new(plan(&[0.5, 0.8])).unwrap();
        s.step(0.0, 0.0, 0.0);
        s.step(0.0, 0.0, 0.0);
        let (_, d) = s.step(0.81, 0.2, 1.0);
        assert_eq!(d.map(|d| d.index), Some(1));
        assert_eq!(s.missed, vec![0]);
    }

    #[test]
    fn deploy_waits_until_stopped() {
        let p = FeedPlan { deploy_time: 5.0, ..plan(&[1.0]) };
        let mut s = FeedSequencer::new(p).unwrap();
        assert_eq!(s.step(0.0, 0.25, 0.0).0, 0.0);
        s.step(0.01, 0.1, 1.0);
        s.step(0.02, 0.0, 2.0);
        assert!(matches!(s.phase, FeedPhase::StopDeploy { .. }));
        s.step(0.02, 0.0, 7.0);
        assert_eq!(s.phase, FeedPhase::Feeding);
    }

    #[test]
    fn controller_completes_route() {
        let mut c = Controller::new(TrackerConfig::default(), vec![wp(0.0, 0.0), wp(5.0, 0.0)], 1.0, 2.0, None).unwrap();
        let out = c.step(&Monitored { pose: Pose2D::new(1.0, 0.0, 0.0), ..Default::default() }, 0.0).unwrap();
        assert_eq!(out.u_o, 1.0);
        c.step(&Monitored { pose: Pose2D::new(4.0, 0.0, 0.0), ..Default::default() }, 1.0).unwrap();
        assert!(c.is_complete());
    }

    fn rotate(p: (f64, f64), th: f64) -> (f64, f64) {
        let (s, c) = th.sin_cos();
        (c * p.0 - s * p.1, s * p.0 + c * p.1)
    }

    proptest! {
        #[test]
        fn steering_is_clamped_and_rotation_equivariant(
            x in -5.0f64..5.0, y in -5.0f64..5.0, psi in -PI..PI, th in -PI..PI,
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, bx in -5.0f64..5.0, by in -5.0f64..5.0,
        ) {
            prop_assume!((bx - ax).hypot(by - ay) > 0.1);
            prop_assume!((bx - x).hypot(by - y) > 0.1);
            let cfg = TrackerConfig { gain_heading: 0.7, max_steer: 10.0, ..Default::default() };
            let pose = Pose2D::new(x, y, psi);
            let rp = rotate((x, y), th);
            let rpose = Pose2D::new(rp.0, rp.1, psi + th);
            let (ra, rb) = (rotate((ax, ay), th), rotate((bx, by), th));
            let (a, b) = (wp(ax, ay), wp(bx, by));
            let (a2, b2) = (wp(ra.0, ra.1), wp(rb.0, rb.1));
            let pairs = [
                (steer_method1(&pose, b, &cfg), steer_method1(&rpose, b2, &cfg)),
                (steer_method2(&pose, a, b, &cfg).unwrap(), steer_method2(&rpose, a2, b2, &cfg).unwrap()),
                (steer_method3(&pose, a, b, &cfg).unwrap(), steer_method3(&rpose, a2, b2, &cfg).unwrap()),
            ];
            for (d, d2) in pairs {
                // a bearing error at exactly +-pi may wrap to either side
                let wrapped = ((d - d2).abs() - 2.0 * PI * cfg.gain_heading).abs() < 1e-6;
                prop_assert!((d - d2).abs() < 1e-9 || wrapped, "{d} vs {d2}");
            }
            let tight = TrackerConfig { max_steer: 0.3, ..cfg };
            prop_assert!(steer_method1(&pose, b, &tight).abs() <= 0.3);
            prop_assert!(steer_method2(&pose, a, b, &tight).unwrap().abs() <= 0.3);
            prop_assert!(steer_method3(&pose, a, b, &tight).unwrap().abs() <= 0.3);
        }

        #[test]
        fn route_manager_returns_a_prefix(n in 1usize..20, calls in 0usize..25) {
            let route: Vec<_> = (0..n).map(|i| wp(i as f64, 0.0)).collect();
            let mut m = RouteManager::new(route.clone());
            let mut got = Vec::new();
            for _ in 0..calls {
                match m.next_waypoint() {
                    Ok(w) => got.push(w),
                    Err(e) => {
                        prop_assert_eq!(e, ControllerError::RouteExhausted);
                        break;
                    }
                }
            }
            prop_assert_eq!(&route[..got.len()], &got[..]);
        }
    }
}
