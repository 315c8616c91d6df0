//! Design space exploration: parameter sweeps, viability boundaries, golden
//! section search on the feeding cost and min-mean-max expansion.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::cosim::{evaluate, run, CoSimError, Criterion, RadiusSource, Scenario};
use crate::plant::CompressionModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DseError {
    #[error("invalid design space: {0}")]
    InvalidSpace(String),
    #[error("b_tot must be positive")]
    NoPlacements,
    #[error("b_suc {0} exceeds b_tot {1}")]
    TooManySuccesses(usize, usize),
    #[error("empty sample")]
    Empty,
    #[error("invalid search: {0}")]
    InvalidSearch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AxisKind {
    ContinuousRange { lo: f64, hi: f64, step: f64 },
    DiscreteSet(Vec<f64>),
    ModeSet(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub kind: AxisKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AxisValue {
    Number(f64),
    Mode(String),
}

impl AxisValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AxisValue::Number(v) => Some(*v),
            AxisValue::Mode(_) => None,
        }
    }
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Number(v) => write!(f, "{v}"),
            AxisValue::Mode(m) => f.write_str(m),
        }
    }
}

/// Grid points of a stepped range. The upper bound is included when it lies
/// on the grid up to rounding.
pub fn range_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let v = lo + step * i as f64;
            // snap accumulated rounding onto the bound
            if (v - hi).abs() < 1e-9 * step.max(1.0) {
                hi
            } else {
                v
            }
        })
        .collect()
}

impl Axis {
    pub fn range(name: &str, lo: f64, hi: f64, step: f64) -> Self {
        Self { name: name.into(), kind: AxisKind::ContinuousRange { lo, hi, step } }
    }

    pub fn set(name: &str, values: &[f64]) -> Self {
        Self { name: name.into(), kind: AxisKind::DiscreteSet(values.to_vec()) }
    }

    pub fn modes(name: &str, modes: &[&str]) -> Self {
        Self { name: name.into(), kind: AxisKind::ModeSet(modes.iter().map(|m| m.to_string()).collect()) }
    }

    pub fn validate(&self) -> Result<(), DseError> {
        let bad = |m: String| Err(DseError::InvalidSpace(format!("axis {}: {m}", self.name)));
        match &self.kind {
            AxisKind::ContinuousRange { lo, hi, step } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("needs lo < hi, got [{lo}, {hi}]"));
                }
                if !(*step > 0.0) {
                    return bad(format!("step {step} must be positive"));
                }
            }
            AxisKind::DiscreteSet(v) if v.is_empty() => return bad("empty set".into()),
            AxisKind::DiscreteSet(v) if v.iter().any(|x| !x.is_finite()) => return bad("non-finite value".into()),
            AxisKind::ModeSet(m) if m.is_empty() => return bad("empty mode set".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<AxisValue> {
        match &self.kind {
            AxisKind::ContinuousRange { lo, hi, step } => {
                range_points(*lo, *hi, *step).into_iter().map(AxisValue::Number).collect()
            }
            AxisKind::DiscreteSet(v) => v.iter().copied().map(AxisValue::Number).collect(),
            AxisKind::ModeSet(m) => m.iter().cloned().map(AxisValue::Mode).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignSpace {
    pub axes: Vec<Axis>,
}

pub type Assignment = Vec<(String, AxisValue)>;

impl DesignSpace {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    pub fn validate(&self) -> Result<(), DseError> {
        for (i, a) in self.axes.iter().enumerate() {
            a.validate()?;
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(DseError::InvalidSpace(format!("duplicate axis {}", a.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values().len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in lexicographic order, the first axis varying slowest.
    pub fn points(&self) -> Vec<Assignment> {
        let values: Vec<Vec<AxisValue>> = self.axes.iter().map(Axis::values).collect();
        let mut out: Vec<Assignment> = vec![Vec::new()];
        for (axis, vals) in self.axes.iter().zip(&values) {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    vals.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((axis.name.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// SplitMix64 step; mixes the global seed with a point index.
pub fn point_seed(global: u64, index: u64) -> u64 {
    let mut z = global.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub index: usize,
    pub assignment: Assignment,
    pub seed: u64,
    pub cost: f64,
    pub viable: bool,
    pub max_xte: f64,
    pub b_suc: usize,
    pub b_tot: usize,
    /// Wall-clock seconds; informational only and never written to results.
    pub runtime: f64,
    pub reason: Option<String>,
    /// True path, decimated for plotting.
    pub path: Vec<(f64, f64)>,
}

/// Upper bound on the points kept in [`CandidateResult::path`].
pub const PATH_POINTS: usize = 400;

impl CandidateResult {
    pub fn value(&self, name: &str) -> Option<&AxisValue> {
        self.assignment.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// Applies every assignment entry to the scenario.
pub fn apply_assignment(scenario: &mut Scenario, assignment: &Assignment) -> Result<(), CoSimError> {
    for (name, value) in assignment {
        match value {
            AxisValue::Number(v) => scenario.set_parameter(name, *v)?,
            AxisValue::Mode(m) => scenario.set_mode(name, m)?,
        }
    }
    Ok(())
}

fn evaluate_point<F>(index: usize, assignment: Assignment, global_seed: u64, factory: &F, criterion: &Criterion) -> CandidateResult
where
    F: Fn(&Assignment) -> Result<Scenario, CoSimError>,
{
    let seed = point_seed(global_seed, index as u64);
    let start = Instant::now();
    let outcome = factory(&assignment).and_then(|mut s| {
        s.cosim.seed = seed;
        run(&s)
    });
    let runtime = start.elapsed().as_secs_f64();
    match outcome {
        Ok(trace) => {
            let e = evaluate(&trace, criterion);
            let every = trace.rows.len().div_ceil(PATH_POINTS).max(1);
            let path = trace.rows.iter().step_by(every).map(|r| (r.truth.pose.x, r.truth.pose.y)).collect();
            CandidateResult {
                index,
                assignment,
                seed,
                cost: e.cost,
                viable: e.viable,
                max_xte: e.max_xte,
                b_suc: e.hits,
                b_tot: e.placements,
                runtime,
                reason: e.reason,
                path,
            }
        }
        Err(err) => CandidateResult {
            index,
            assignment,
            seed,
            cost: f64::NAN,
            viable: false,
            max_xte: f64::NAN,
            b_suc: 0,
            b_tot: 0,
            runtime,
            reason: Some(err.to_string()),
            path: Vec::new(),
        },
    }
}

/// Maps `f` over `items` in order, on `workers` threads when the `parallel`
/// feature is enabled.
pub fn ordered_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers != 1 {
        use rayon::prelude::*;
        let run = || items.into_par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        return match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        };
    }
    let _ = workers;
    items.into_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Evaluates every point of `space`. Results come back in canonical order
/// whatever the worker count; `workers == 0` uses all available threads.
pub fn sweep_with<F>(
    space: &DesignSpace,
    factory: F,
    criterion: &Criterion,
    global_seed: u64,
    workers: usize,
) -> Result<Vec<CandidateResult>, DseError>
where
    F: Fn(&Assignment) -> Result<Scenario, CoSimError> + Sync + Send,
{
    space.validate()?;
    Ok(ordered_map(space.points(), workers, |i, a| evaluate_point(i, a, global_seed, &factory, criterion)))
}

/// Sweep over copies of `base` with each point's assignment applied.
pub fn sweep(
    space: &DesignSpace,
    base: &Scenario,
    criterion: &Criterion,
    workers: usize,
) -> Result<Vec<CandidateResult>, DseError> {
    sweep_with(
        space,
        |a| {
            let mut s = base.clone();
            apply_assignment(&mut s, a)?;
            Ok(s)
        },
        criterion,
        base.cosim.seed,
        workers,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGroup {
    pub key: Vec<(String, AxisValue)>,
    /// Largest swept speed with a viable candidate.
    pub max_viable: Option<f64>,
    /// Viable speeds that lie above some non-viable speed in the group.
    pub violations: Vec<f64>,
}

/// Groups results by every axis except `speed_axis` and reports the largest
/// viable speed per group.
pub fn classify_boundary(results: &[CandidateResult], speed_axis: &str) -> Vec<BoundaryGroup> {
    let mut groups: Vec<(Vec<(String, AxisValue)>, Vec<(f64, bool)>)> = Vec::new();
    for r in results {
        let Some(speed) = r.value(speed_axis).and_then(AxisValue::as_number) else { continue };
        let key: Vec<_> = r.assignment.iter().filter(|(n, _)| n != speed_axis).cloned().collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((speed, r.viable)),
            None => groups.push((key, vec![(speed, r.viable)])),
        }
    }
    groups
        .into_iter()
        .map(|(key, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let max_viable = pts.iter().filter(|p| p.1).map(|p| p.0).next_back();
            let first_bad = pts.iter().find(|p| !p.1).map(|p| p.0);
            let violations = match first_bad {
                Some(bad) => pts.iter().filter(|p| p.1 && p.0 > bad).map(|p| p.0).collect(),
                None => Vec::new(),
            };
            BoundaryGroup { key, max_viable, violations }
        })
        .collect()
}

/// Narrowed speed axis for a second pass: `band` either side of the detected
/// boundaries, clipped to the original range, at half the original step.
pub fn refine_axis(axis: &Axis, groups: &[BoundaryGroup], band: f64) -> Option<Axis> {
    let AxisKind::ContinuousRange { lo, hi, step } = axis.kind else { return None };
    let edges: Vec<f64> = groups.iter().filter_map(|g| g.max_viable).collect();
    if edges.is_empty() {
        return None;
    }
    let min = edges.iter().copied().fold(f64::INFINITY, f64::min);
    let max = edges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = ((min - band).max(lo), (max + band).min(hi));
    (a < b).then(|| Axis::range(&axis.name, a, b, step / 2.0))
}

/// `-b_suc² / b_tot`: lower is better.
pub fn feed_cost(b_suc: usize, b_tot: usize) -> Result<f64, DseError> {
    if b_tot == 0 {
        return Err(DseError::NoPlacements);
    }
    if b_suc > b_tot {
        return Err(DseError::TooManySuccesses(b_suc, b_tot));
    }
    Ok(-((b_suc * b_suc) as f64) / b_tot as f64)
}

pub const GOLDEN_RATIO: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenResult {
    pub x: f64,
    pub cost: f64,
    pub evaluations: usize,
    /// Final bracket.
    pub bracket: (f64, f64),
}

/// Upper bound on evaluations made by [`golden_section`].
pub fn golden_budget(width: f64, tol: f64) -> usize {
    if width <= tol {
        return 1;
    }
    ((width / tol).ln() / (1.0 / GOLDEN_RATIO).ln()).ceil() as usize + 2
}

/// Golden-section minimisation on `[lo, hi]`. Ties move the bracket up so a
/// cost that never changes drifts to the upper end.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<GoldenResult, DseError> {
    if !(tol > 0.0) || !(lo <= hi) {
        return Err(DseError::InvalidSearch(format!("need tol > 0 and lo <= hi, got [{lo}, {hi}] tol {tol}")));
    }
    let (mut a, mut b) = (lo, hi);
    let mut evaluations = 0;
    let mut eval = |x: f64| {
        evaluations += 1;
        f(x)
    };
    if b - a > tol {
        let mut c = b - GOLDEN_RATIO * (b - a);
        let mut d = a + GOLDEN_RATIO * (b - a);
        let (mut fc, mut fd) = (eval(c), eval(d));
        loop {
            if fc < fd {
                b = d;
                if b - a <= tol {
                    break;
                }
                (d, fd) = (c, fc);
                c = b - GOLDEN_RATIO * (b - a);
                fc = eval(c);
            } else {
                a = c;
                if b - a <= tol {
                    break;
                }
                (c, fc) = (d, fd);
                d = a + GOLDEN_RATIO * (b - a);
                fd = eval(d);
            }
        }
    }
    let x = 0.5 * (a + b);
    let cost = eval(x);
    Ok(GoldenResult { x, cost, evaluations, bracket: (a, b) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustResult {
    pub x: f64,
    pub cost: f64,
    pub evaluations: usize,
    /// Set when the golden result was not trusted and the grid scan decided.
    pub warning: Option<String>,
}

/// Golden-section search guarded against step-valued costs.
///
/// A coarse scan of `coarse` intervals picks the bracket (ties go to the larger
/// argument, matching the search's tie rule); golden section then refines
/// inside it. When the final bracket's endpoints both beat the returned
/// interior point the function is not unimodal there, and the best scanned
/// point wins instead.
pub fn minimize_robust<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    coarse: usize,
) -> Result<RobustResult, DseError> {
    if coarse == 0 {
        return Err(DseError::InvalidSearch("coarse scan needs at least one interval".into()));
    }
    let step = (hi - lo) / coarse as f64;
    let mut evaluations = 0;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=coarse {
        let x = if i == coarse { hi } else { lo + step * i as f64 };
        let c = f(x);
        evaluations += 1;
        if c <= best.1 {
            best = (x, c);
        }
    }
    let (a, b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = golden_section(&mut f, a, b, tol)?;
    evaluations += g.evaluations;
    let (fa, fb) = (f(g.bracket.0), f(g.bracket.1));
    evaluations += 2;
    let mut candidates = [(g.x, g.cost), (g.bracket.0, fa), (g.bracket.1, fb), best];
    let warning = (fa < g.cost && fb < g.cost).then(|| {
        format!("cost not unimodal near {:.4}; using the best scanned point", g.x)
    });
    if warning.is_none() && g.cost <= best.1 {
        return Ok(RobustResult { x: g.x, cost: g.cost, evaluations, warning });
    }
    // lowest cost, larger argument on ties
    candidates.sort_by(|p, q| p.1.total_cmp(&q.1).then(q.0.total_cmp(&p.0)));
    let (x, cost) = candidates[0];
    Ok(RobustResult { x, cost, evaluations, warning })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotStats {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Median, quartiles and min/max whiskers.
pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats, DseError> {
    if values.is_empty() {
        return Err(DseError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(BoxplotStats {
        median: quantile(&v, 0.5),
        q25: quantile(&v, 0.25),
        q75: quantile(&v, 0.75),
        whisker_lo: v[0],
        whisker_hi: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Levels {
    pub fn new(min: f64, mean: f64, max: f64) -> Self {
        Self { min, mean, max }
    }

    fn all(&self) -> [f64; 3] {
        [self.min, self.mean, self.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMeanMaxSet {
    pub load_mass: Levels,
    pub mu: Levels,
    pub x_init: Levels,
    pub y_init: Levels,
    pub psi_init: Levels,
}

impl Default for MinMeanMaxSet {
    fn default() -> Self {
        let deg = 15f64.to_radians();
        Self {
            load_mass: Levels::new(6.0, 300.0, 600.0),
            mu: Levels::new(0.3, 0.5, 0.7),
            x_init: Levels::new(-0.5, 0.0, 0.5),
            y_init: Levels::new(-0.1, 0.0, 0.1),
            psi_init: Levels::new(-deg, 0.0, deg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Expansion {
    /// Mean baseline plus each factor at its min and max with the rest at mean.
    #[default]
    OneFactorAtATime,
    FullFactorial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentPoint {
    pub load_mass: f64,
    pub mu: f64,
    pub x_init: f64,
    pub y_init: f64,
    pub psi_init: f64,
}

impl MinMeanMaxSet {
    pub fn validate(&self) -> Result<(), DseError> {
        for (name, l) in self.factors() {
            if !(l.min <= l.mean && l.mean <= l.max) {
                return Err(DseError::InvalidSpace(format!("{name}: need min <= mean <= max")));
            }
        }
        Ok(())
    }

    fn factors(&self) -> [(&'static str, Levels); 5] {
        [
            ("load_mass", self.load_mass),
            ("mu", self.mu),
            ("x_init", self.x_init),
            ("y_init", self.y_init),
            ("psi_init", self.psi_init),
        ]
    }

    fn point(v: [f64; 5]) -> EnvironmentPoint {
        EnvironmentPoint { load_mass: v[0], mu: v[1], x_init: v[2], y_init: v[3], psi_init: v[4] }
    }

    pub fn points(&self, expansion: Expansion) -> Vec<EnvironmentPoint> {
        let f = self.factors().map(|(_, l)| l);
        let mean = f.map(|l| l.mean);
        match expansion {
            Expansion::OneFactorAtATime => {
                let mut out = vec![Self::point(mean)];
                for (i, l) in f.iter().enumerate() {
                    for v in [l.min, l.max] {
                        let mut p = mean;
                        p[i] = v;
                        out.push(Self::point(p));
                    }
                }
                out
            }
            Expansion::FullFactorial => {
                let mut out = Vec::with_capacity(243);
                for a in f[0].all() {
                    for b in f[1].all() {
                        for c in f[2].all() {
                            for d in f[3].all() {
                                for e in f[4].all() {
                                    out.push(Self::point([a, b, c, d, e]));
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

impl EnvironmentPoint {
    pub fn apply(&self, s: &mut Scenario) -> Result<(), CoSimError> {
        s.set_parameter("load_mass", self.load_mass)?;
        s.set_parameter("mu", self.mu)?;
        s.set_parameter("x_init", self.x_init)?;
        s.set_parameter("y_init", self.y_init)?;
        s.set_parameter("psi_init", self.psi_init)
    }
}

/// How the controller arrives at its wheel radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    Static,
    PreCalibration,
    Estimator,
}

impl EstimateMethod {
    pub const ALL: [EstimateMethod; 3] = [EstimateMethod::Static, EstimateMethod::PreCalibration, EstimateMethod::Estimator];

    pub fn name(&self) -> &'static str {
        match self {
            EstimateMethod::Static => "static",
            EstimateMethod::PreCalibration => "pre-calibration",
            EstimateMethod::Estimator => "estimator",
        }
    }

    pub fn radius_source(&self, full_load: f64) -> RadiusSource {
        match self {
            EstimateMethod::Static => RadiusSource::Static { full_load },
            EstimateMethod::PreCalibration => RadiusSource::PreCalibrated { accuracy: 0.001 },
            EstimateMethod::Estimator => RadiusSource::Estimator { bias: -0.005 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    /// Rear tyre radius change at full load, m.
    pub compression: f64,
    pub method: EstimateMethod,
}

pub const TYRE_COMPRESSIONS: [f64; 3] = [0.001, 0.02, 0.04];
pub const FULL_LOAD: f64 = 600.0;

/// The nine configurations: each compression level with each estimate method.
pub fn system_configs() -> Vec<SystemConfig> {
    TYRE_COMPRESSIONS
        .iter()
        .flat_map(|&compression| EstimateMethod::ALL.map(|method| SystemConfig { compression, method }))
        .collect()
}

impl SystemConfig {
    pub fn apply(&self, s: &mut Scenario) {
        s.compression = CompressionModel::linear_table(FULL_LOAD, self.compression);
        s.localization.radius = self.method.radius_source(FULL_LOAD);
    }
}

/// Every (configuration, environment point) pair, configuration-major.
pub fn expand_min_mean_max(
    set: &MinMeanMaxSet,
    configs: &[SystemConfig],
    expansion: Expansion,
) -> Result<Vec<(SystemConfig, EnvironmentPoint)>, DseError> {
    set.validate()?;
    let env = set.points(expansion);
    Ok(configs.iter().flat_map(|c| env.iter().map(move |e| (*c, *e))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub coarse: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { lo: 0.3, hi: 20.0, tol: 0.01, coarse: 40 }
    }
}

/// Deterministic feeding cost of one tag spacing: the scenario's seed is fixed
/// so repeated calls agree.
pub fn feed_cost_at(base: &Scenario, d_t: f64) -> f64 {
    let mut s = base.clone();
    if s.set_parameter("d_t", d_t).is_err() {
        return 0.0;
    }
    match run(&s) {
        Ok(trace) => evaluate(&trace, &Criterion::FeedSuccess).cost,
        Err(_) => 0.0,
    }
}

/// Best tag spacing for one scenario. When no probed spacing lands a single
/// dispense the cost is flat at zero and the search would drift to `hi`; that
/// case is reported as the densest allowed spacing with a warning instead.
pub fn search_tag_spacing(base: &Scenario, search: &SearchConfig) -> Result<RobustResult, DseError> {
    let mut r = minimize_robust(|d| feed_cost_at(base, d), search.lo, search.hi, search.tol, search.coarse)?;
    if r.cost >= 0.0 {
        r.x = search.lo;
        r.warning = Some(format!("no feasible tag spacing in [{}, {}] m", search.lo, search.hi));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub config: SystemConfig,
    pub environment: Vec<EnvironmentPoint>,
    /// Best tag spacing per environment point, in expansion order.
    pub d_t: Vec<f64>,
    pub stats: BoxplotStats,
    pub warnings: Vec<String>,
}

/// Runs the tag-spacing search at every point of the evaluation matrix and
/// groups the results per configuration.
pub fn feeding_study(
    base: &Scenario,
    set: &MinMeanMaxSet,
    configs: &[SystemConfig],
    expansion: Expansion,
    search: &SearchConfig,
    workers: usize,
) -> Result<Vec<ConfigResult>, DseError> {
    let matrix = expand_min_mean_max(set, configs, expansion)?;
    let outcomes = ordered_map(matrix.clone(), workers, |i, (config, env)| {
        let mut s = base.clone();
        config.apply(&mut s);
        env.apply(&mut s).map_err(|e| DseError::InvalidSpace(e.to_string()))?;
        s.cosim.seed = point_seed(base.cosim.seed, i as u64);
        search_tag_spacing(&s, search)
    });
    let mut out: Vec<ConfigResult> = Vec::new();
    let mut grouped: BTreeMap<usize, (Vec<EnvironmentPoint>, Vec<f64>, Vec<String>)> = BTreeMap::new();
    for ((config, env), r) in matrix.iter().zip(outcomes) {
        let idx = configs.iter().position(|c| c == config).unwrap_or(0);
        let entry = grouped.entry(idx).or_default();
        let r = r?;
        entry.0.push(*env);
        entry.1.push(r.x);
        entry.2.extend(r.warning);
    }
    for (idx, (environment, d_t, warnings)) in grouped {
        let stats = boxplot_stats(&d_t)?;
        out.push(ConfigResult { config: configs[idx], environment, d_t, stats, warnings });
    }
    Ok(out)
}

/// Draw used by [`RadiusSource::PreCalibrated`]: uniform within the accuracy.
pub fn bounded_error<R: Rng + ?Sized>(rng: &mut R, accuracy: f64) -> f64 {
    if accuracy > 0.0 {
        rng.random_range(-accuracy..=accuracy)
    } else {
        0.0
    }
}
