//! Geometric ground truth: poses, routes, landmark maps and cross-track error.
//!
//! Everything in here is immutable once built, so a single [`Route`] or
//! [`LandmarkMap`] can be shared by any number of concurrently running
//! co-simulations.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

/// Continuity and on-circle tolerance for route geometry, in meters.
pub const ROUTE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("angle is not finite: {0}")]
    NonFiniteAngle(f64),
    #[error("route has no segments")]
    EmptyRoute,
    #[error("invalid landmark map: {0}")]
    InvalidMap(String),
}

/// Wraps an angle into `(-pi, pi]`.
///
/// Values already inside the interval are returned untouched, which makes the
/// function exactly idempotent.
pub fn normalize_angle(theta: f64) -> Result<f64, WorldError> {
    if !theta.is_finite() {
        return Err(WorldError::NonFiniteAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Infallible variant of [`normalize_angle`] for values known to be finite.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Planar pose in the global frame. `psi` is counter-clockwise positive.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi: wrap_angle(psi) }
    }

    pub fn position(&self) -> Waypoint {
        Waypoint::new(self.x, self.y)
    }

    pub fn distance_to(&self, p: Waypoint) -> f64 {
        (p.x - self.x).hypot(p.y - self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Waypoint) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A rigid planar transform, rotation first then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform {
    pub fn apply(&self, p: Waypoint) -> Waypoint {
        let (s, c) = self.rotation.sin_cos();
        Waypoint::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty)
    }

    pub fn apply_pose(&self, pose: Pose2D) -> Pose2D {
        let p = self.apply(pose.position());
        Pose2D::new(p.x, p.y, pose.psi + self.rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Cw,
    Ccw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Line,
    /// Minor (at most half-circle) arc of the given radius, turning in `turn`.
    Arc { radius: f64, turn: Turn },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteSegment {
    pub kind: SegmentKind,
    pub start: Waypoint,
    pub end: Waypoint,
}

/// Circle parameters of an arc segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcGeometry {
    pub center: Waypoint,
    pub radius: f64,
    pub start_angle: f64,
    /// Signed angular sweep, positive counter-clockwise.
    pub sweep: f64,
}

impl ArcGeometry {
    pub fn point_at_angle(&self, offset: f64) -> Waypoint {
        let a = self.start_angle + offset;
        Waypoint::new(
            self.center.x + self.radius * a.cos(),
            self.center.y + self.radius * a.sin(),
        )
    }

    fn distance_to(&self, p: Waypoint, start: Waypoint, end: Waypoint) -> f64 {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        let rho = dx.hypot(dy);
        if rho > 0.0 {
            let rel = if self.sweep >= 0.0 {
                (dy.atan2(dx) - self.start_angle).rem_euclid(TAU)
            } else {
                (self.start_angle - dy.atan2(dx)).rem_euclid(TAU)
            };
            if rel <= self.sweep.abs() {
                return (rho - self.radius).abs();
            }
        } else {
            return self.radius;
        }
        p.distance(start).min(p.distance(end))
    }
}

impl RouteSegment {
    pub fn line(start: Waypoint, end: Waypoint) -> Self {
        Self { kind: SegmentKind::Line, start, end }
    }

    pub fn arc(start: Waypoint, end: Waypoint, radius: f64, turn: Turn) -> Self {
        Self { kind: SegmentKind::Arc { radius, turn }, start, end }
    }

    /// Circle parameters for arc segments. `None` for lines and for arcs whose
    /// chord does not fit the radius.
    pub fn arc_geometry(&self) -> Option<ArcGeometry> {
        let SegmentKind::Arc { radius, turn } = self.kind else {
            return None;
        };
        let dx = self.end.x - self.start.x;
        let dy = self.end.y - self.start.y;
        let chord = dx.hypot(dy);
        if !(radius > 0.0) || chord == 0.0 || chord / 2.0 > radius + ROUTE_TOLERANCE {
            return None;
        }
        let h = (radius * radius - chord * chord / 4.0).max(0.0).sqrt();
        // left normal of the chord
        let (nx, ny) = (-dy / chord, dx / chord);
        let sign = match turn {
            Turn::Ccw => 1.0,
            Turn::Cw => -1.0,
        };
        let center = Waypoint::new(
            (self.start.x + self.end.x) / 2.0 + sign * h * nx,
            (self.start.y + self.end.y) / 2.0 + sign * h * ny,
        );
        let a0 = (self.start.y - center.y).atan2(self.start.x - center.x);
        let a1 = (self.end.y - center.y).atan2(self.end.x - center.x);
        let sweep = match turn {
            Turn::Ccw => {
                let s = (a1 - a0).rem_euclid(TAU);
                if s == 0.0 { TAU } else { s }
            }
            Turn::Cw => {
                let s = (a0 - a1).rem_euclid(TAU);
                -(if s == 0.0 { TAU } else { s })
            }
        };
        Some(ArcGeometry { center, radius, start_angle: a0, sweep })
    }

    pub fn length(&self) -> f64 {
        match self.kind {
            SegmentKind::Line => self.start.distance(self.end),
            SegmentKind::Arc { .. } => self
                .arc_geometry()
                .map(|g| g.radius * g.sweep.abs())
                .unwrap_or(f64::NAN),
        }
    }

    /// Point at arc length `s` from the start, clamped to the segment.
    pub fn point_at(&self, s: f64) -> Waypoint {
        let len = self.length();
        let s = s.clamp(0.0, len);
        match self.arc_geometry() {
            Some(g) => g.point_at_angle(g.sweep.signum() * s / g.radius),
            None => {
                let t = if len > 0.0 { s / len } else { 0.0 };
                Waypoint::new(
                    self.start.x + t * (self.end.x - self.start.x),
                    self.start.y + t * (self.end.y - self.start.y),
                )
            }
        }
    }

    /// Unsigned distance from `p` to the segment, clamped to its extent.
    pub fn distance_to(&self, p: Waypoint) -> f64 {
        match self.arc_geometry() {
            Some(g) => g.distance_to(p, self.start, self.end),
            None => point_segment_distance(p, self.start, self.end),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { kind: self.kind, start: t.apply(self.start), end: t.apply(self.end) }
    }
}

pub fn point_segment_distance(p: Waypoint, a: Waypoint, b: Waypoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Waypoint::new(a.x + t * dx, a.y + t * dy))
}

/// An ordered chain of line and arc segments.
///
/// A route built from a single waypoint has no segments; [`validate_route`]
/// reports that as a length violation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Route {
    pub segments: Vec<RouteSegment>,
}

impl Route {
    pub fn new(segments: Vec<RouteSegment>) -> Self {
        Self { segments }
    }

    /// Straight-line route through the given waypoints.
    pub fn from_waypoints(points: &[Waypoint]) -> Self {
        Self {
            segments: points.windows(2).map(|w| RouteSegment::line(w[0], w[1])).collect(),
        }
    }

    /// Segment endpoints: the first start followed by every segment end.
    pub fn waypoints(&self) -> Vec<Waypoint> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        if let Some(first) = self.segments.first() {
            out.push(first.start);
        }
        out.extend(self.segments.iter().map(|s| s.end));
        out
    }

    /// Waypoint sequence with arcs sampled at no more than `spacing` meters.
    pub fn densify(&self, spacing: f64) -> Vec<Waypoint> {
        let mut out = Vec::new();
        if let Some(first) = self.segments.first() {
            out.push(first.start);
        }
        for seg in &self.segments {
            match seg.kind {
                SegmentKind::Line => out.push(seg.end),
                SegmentKind::Arc { .. } => {
                    let len = seg.length();
                    let n = ((len / spacing).ceil() as usize).max(1);
                    for i in 1..n {
                        out.push(seg.point_at(len * i as f64 / n as f64));
                    }
                    out.push(seg.end);
                }
            }
        }
        out
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(RouteSegment::length).sum()
    }

    pub fn start_heading(&self) -> f64 {
        let Some(seg) = self.segments.first() else {
            return 0.0;
        };
        let p = seg.point_at(1e-3_f64.min(seg.length() / 2.0));
        (p.y - seg.start.y).atan2(p.x - seg.start.x)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { segments: self.segments.iter().map(|s| s.transformed(t)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteRule {
    TooFewWaypoints,
    NonFinite,
    ZeroLength,
    NonPositiveRadius,
    EndpointsOffCircle,
    Discontinuous { gap: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteViolation {
    pub segment: usize,
    pub rule: RouteRule,
}

/// Lists every broken route invariant. Empty means the route is usable.
pub fn validate_route(route: &Route) -> Vec<RouteViolation> {
    let mut out = Vec::new();
    if route.segments.is_empty() {
        out.push(RouteViolation { segment: 0, rule: RouteRule::TooFewWaypoints });
        return out;
    }
    for (i, seg) in route.segments.iter().enumerate() {
        let mut push = |rule| out.push(RouteViolation { segment: i, rule });
        if !seg.start.is_finite() || !seg.end.is_finite() {
            push(RouteRule::NonFinite);
            continue;
        }
        match seg.kind {
            SegmentKind::Line => {
                if seg.start.distance(seg.end) <= 0.0 {
                    push(RouteRule::ZeroLength);
                }
            }
            SegmentKind::Arc { radius, .. } => {
                if !(radius > 0.0) {
                    push(RouteRule::NonPositiveRadius);
                } else if seg.start.distance(seg.end) <= 0.0 {
                    push(RouteRule::ZeroLength);
                } else if seg.arc_geometry().is_none() {
                    push(RouteRule::EndpointsOffCircle);
                }
            }
        }
        if i > 0 {
            let gap = route.segments[i - 1].end.distance(seg.start);
            if gap > ROUTE_TOLERANCE {
                push(RouteRule::Discontinuous { gap });
            }
        }
    }
    out
}

/// Unsigned cross-track error: distance from the pose to the nearest point of
/// the geometric route (true arcs, not chords).
pub fn xte(pose: &Pose2D, route: &Route) -> Result<f64, WorldError> {
    if route.segments.is_empty() {
        return Err(WorldError::EmptyRoute);
    }
    let p = pose.position();
    Ok(route
        .segments
        .iter()
        .map(|s| s.distance_to(p))
        .fold(f64::INFINITY, f64::min))
}

/// Wall line in general form, with the coefficient ordering
/// `a * y + b * x + c = 0` (`a` multiplies `y`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl WallLine {
    pub fn is_valid(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && (self.a != 0.0 || self.b != 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Signed distance of `(x, y)` from the wall.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (self.a * y + self.b * x + self.c) / self.norm()
    }

    /// Orientation of the wall normal, `atan2(a, b)`.
    pub fn normal_angle(&self) -> f64 {
        self.a.atan2(self.b)
    }

    /// Unit vector along the wall.
    pub fn direction(&self) -> (f64, f64) {
        let n = self.norm();
        (self.a / n, -self.b / n)
    }

    /// Coordinate of `(x, y)` projected along the wall direction.
    pub fn along(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = self.direction();
        x * dx + y * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfidTag {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedZone {
    pub x: f64,
    pub y: f64,
    pub half_width: f64,
}

pub const MIN_TAG_SPACING: f64 = 0.3;
pub const MAX_TAG_SPACING: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkMap {
    pub poles: Vec<Landmark>,
    pub sidewall: Option<WallLine>,
    pub rfid_tags: Vec<RfidTag>,
    pub feed_zones: Vec<FeedZone>,
    /// Declared spacing between consecutive tags, if any.
    pub tag_spacing: Option<f64>,
}

impl LandmarkMap {
    pub fn validate(&self) -> Result<(), WorldError> {
        if let Some(w) = &self.sidewall {
            if !w.is_valid() {
                return Err(WorldError::InvalidMap("sidewall has a = b = 0".into()));
            }
        }
        let mut ids: Vec<u32> = self.rfid_tags.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(WorldError::InvalidMap("duplicate rfid tag id".into()));
        }
        if let Some(d) = self.tag_spacing {
            if !(MIN_TAG_SPACING..=MAX_TAG_SPACING).contains(&d) {
                return Err(WorldError::InvalidMap(format!(
                    "tag spacing {d} m outside [{MIN_TAG_SPACING}, {MAX_TAG_SPACING}] m"
                )));
            }
        }
        if self.feed_zones.iter().any(|z| !(z.half_width > 0.0)) {
            return Err(WorldError::InvalidMap("feed zone half width must be positive".into()));
        }
        Ok(())
    }

    pub fn tag(&self, id: u32) -> Option<&RfidTag> {
        self.rfid_tags.iter().find(|t| t.id == id)
    }
}
