//! Trace and results serialisation plus static SVG plots.

use std::fmt::Write as _;

use crate::calibration::CalibrationDemo;
use crate::cosim::{Trace, TraceRow};
use crate::dse::{BoundaryGroup, CandidateResult, ConfigResult};
use crate::world::Route;

pub const TRACE_HEADER: &str = "t,x_true,y_true,psi_true,u,v,yaw_rate,roll,x_s,y_s,psi_s,psi_dot_s,u_o,delta_o,ekf_x,ekf_y,ekf_psi,ekf_trace_P,xte,event";

/// `%.Ng`-style formatting: `digits` significant digits, trailing zeros trimmed.
pub fn sig(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}

fn f9(v: f64) -> String {
    sig(v, 9)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn trace_row(out: &mut String, r: &TraceRow) {
    let st = &r.truth;
    let cols = [
        r.t,
        st.pose.x,
        st.pose.y,
        st.pose.psi,
        st.u,
        st.v,
        st.yaw_rate,
        st.roll,
        r.monitored.x,
        r.monitored.y,
        r.monitored.psi,
        r.psi_dot_s,
        r.u_o,
        r.delta_o,
    ];
    let mut fields: Vec<String> = cols.iter().map(|v| f9(*v)).collect();
    match r.belief {
        Some((p, tr)) => fields.extend([p.x, p.y, p.psi, tr].map(f9)),
        None => fields.extend(std::iter::repeat_n(String::new(), 4)),
    }
    fields.push(f9(r.xte));
    fields.push(csv_field(&r.events.join(";")));
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut out = String::with_capacity(200 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.rows {
        trace_row(&mut out, r);
    }
    out
}

pub fn summary_text(trace: &Trace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "termination = {:?}", trace.termination);
    let _ = writeln!(s, "rows = {}", trace.rows.len());
    let _ = writeln!(s, "duration_s = {}", f9(trace.duration()));
    let _ = writeln!(s, "max_xte_m = {}", f9(trace.max_xte()));
    let _ = writeln!(s, "mean_xte_m = {}", f9(trace.mean_xte()));
    let _ = writeln!(s, "rms_xte_m = {}", f9(trace.rms_xte()));
    let hits = trace.hits();
    let _ = writeln!(s, "dispense_hits = {hits}");
    let _ = writeln!(s, "dispense_misses = {}", trace.dispenses.len() - hits);
    let _ = writeln!(s, "placements = {}", trace.placements);
    let _ = writeln!(s, "final_position_error_m = {}", f9(trace.final_position_error()));
    let _ = writeln!(s, "covariance_psd = {}", trace.covariance_ok);
    let _ = writeln!(s, "assumed_radius_m = {}", f9(trace.assumed_radius));
    let _ = writeln!(s, "true_radius_m = {}", f9(trace.true_radius));
    s
}

/// Belief error statistics against ground truth.
pub fn ekf_text(trace: &Trace, dead_reckoning: bool) -> String {
    let errors: Vec<f64> = trace
        .rows
        .iter()
        .filter_map(|r| r.belief.map(|(b, _)| (b.x - r.truth.pose.x).hypot(b.y - r.truth.pose.y)))
        .collect();
    let mean = if errors.is_empty() { 0.0 } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    let max = errors.iter().copied().fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, "updates = {}", if dead_reckoning { "none (dead reckoning)" } else { "enabled" });
    let _ = writeln!(s, "termination = {:?}", trace.termination);
    let _ = writeln!(s, "rows = {}", trace.rows.len());
    let _ = writeln!(s, "final_position_error_m = {}", f9(trace.final_position_error()));
    let _ = writeln!(s, "mean_position_error_m = {}", f9(mean));
    let _ = writeln!(s, "max_position_error_m = {}", f9(max));
    let _ = writeln!(s, "covariance_psd = {}", trace.covariance_ok);
    let _ = writeln!(s, "psd_guard_activations = {}", trace.guard_activations);
    s
}

pub fn calibration_text(demo: &CalibrationDemo) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "true_radius_m = {}", f9(demo.true_radius));
    let _ = writeln!(s, "counts_per_rev = {}", demo.counts_per_rev);
    for (i, p) in demo.passes.iter().enumerate() {
        let show = |r: &Result<f64, crate::calibration::CalibrationError>| match r {
            Ok(v) => f9(*v),
            Err(e) => format!("unavailable ({e})"),
        };
        let _ = writeln!(
            s,
            "pass {} speed_m_s={} leading={:?} radius_m={} tag_speed_m_s={}",
            i + 1,
            f9(p.speed),
            p.leading,
            show(&p.radius),
            show(&p.tag_speed)
        );
    }
    let _ = writeln!(s, "filtered_radius_m = {}", f9(demo.filtered));
    if demo.diagnostics.is_empty() {
        let _ = writeln!(s, "diagnostics = none");
    }
    for d in &demo.diagnostics {
        let _ = writeln!(s, "diagnostic = {d:?}");
    }
    s
}

/// One row per candidate; wall-clock runtime is left out so files compare
/// byte-for-byte across runs.
pub fn results_csv(results: &[CandidateResult]) -> String {
    let mut out = String::new();
    let names: Vec<&str> = results.first().map_or(Vec::new(), |r| r.assignment.iter().map(|(n, _)| n.as_str()).collect());
    let mut header: Vec<&str> = vec!["index"];
    header.extend(&names);
    header.extend(["seed", "cost", "viable", "max_xte", "b_suc", "b_tot", "reason"]);
    out.push_str(&header.join(","));
    out.push('\n');
    for r in results {
        let mut f = vec![r.index.to_string()];
        f.extend(r.assignment.iter().map(|(_, v)| match v {
            crate::dse::AxisValue::Number(x) => f9(*x),
            crate::dse::AxisValue::Mode(m) => csv_field(m),
        }));
        f.push(r.seed.to_string());
        f.push(f9(r.cost));
        f.push(r.viable.to_string());
        f.push(f9(r.max_xte));
        f.push(r.b_suc.to_string());
        f.push(r.b_tot.to_string());
        f.push(csv_field(r.reason.as_deref().unwrap_or("")));
        out.push_str(&f.join(","));
        out.push('\n');
    }
    out
}

pub fn boundary_text(groups: &[BoundaryGroup], speed_axis: &str) -> String {
    let mut out = String::new();
    for g in groups {
        let key: Vec<String> = g.key.iter().map(|(n, v)| format!("{n}={v}")).collect();
        let max = g.max_viable.map_or("none".to_string(), f9);
        let _ = write!(out, "{} max_viable_{speed_axis}={max}", key.join(" "));
        if !g.violations.is_empty() {
            let v: Vec<String> = g.violations.iter().map(|x| f9(*x)).collect();
            let _ = write!(out, " monotonicity_violations={}", v.join(";"));
        }
        out.push('\n');
    }
    out
}

pub fn feeding_csv(results: &[ConfigResult]) -> String {
    let mut out = String::from("compression_m,method,median,q25,q75,whisker_lo,whisker_hi,d_t_values\n");
    for r in results {
        let s = &r.stats;
        let vals: Vec<String> = r.d_t.iter().map(|v| f9(*v)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            f9(r.config.compression),
            r.config.method.name(),
            f9(s.median),
            f9(s.q25),
            f9(s.q75),
            f9(s.whisker_lo),
            f9(s.whisker_hi),
            vals.join(";")
        );
    }
    out
}

/// Minimal SVG canvas with a data-to-pixel transform.
pub struct Svg {
    body: String,
    width: f64,
    height: f64,
    margin: f64,
    bounds: (f64, f64, f64, f64),
    equal_aspect: bool,
}

fn c(v: f64) -> String {
    format!("{v:.2}")
}

impl Svg {
    pub fn new(width: f64, height: f64, bounds: (f64, f64, f64, f64), equal_aspect: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = bounds;
        if x1 - x0 < 1e-9 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-9 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self { body: String::new(), width, height, margin: 40.0, bounds: (x0, x1, y0, y1), equal_aspect }
    }

    fn scale(&self) -> (f64, f64) {
        let (x0, x1, y0, y1) = self.bounds;
        let sx = (self.width - 2.0 * self.margin) / (x1 - x0);
        let sy = (self.height - 2.0 * self.margin) / (y1 - y0);
        if self.equal_aspect {
            let s = sx.min(sy);
            (s, s)
        } else {
            (sx, sy)
        }
    }

    pub fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.scale();
        let (x0, _, y0, _) = self.bounds;
        (self.margin + (x - x0) * sx, self.height - self.margin - (y - y0) * sy)
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64, dash: bool) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (a, b) = self.px(x, y);
                format!("{},{}", c(a), c(b))
            })
            .collect();
        let dash = if dash { " stroke-dasharray=\"6,4\"" } else { "" };
        let _ = writeln!(
            self.body,
            "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash} points=\"{}\"/>",
            coords.join(" ")
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let (a, b) = self.px(x, y);
        let _ = writeln!(self.body, "<circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"{fill}\"/>", c(a), c(b));
    }

    pub fn rect_px(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"black\"/>",
            c(x),
            c(y),
            c(w),
            c(h)
        );
    }

    pub fn line_px(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{stroke}\"/>",
            c(a.0),
            c(a.1),
            c(b.0),
            c(b.1)
        );
    }

    pub fn text_px(&mut self, x: f64, y: f64, text: &str) {
        let escaped = text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(self.body, "<text x=\"{}\" y=\"{}\" font-size=\"11\" font-family=\"sans-serif\">{escaped}</text>", c(x), c(y));
    }

    pub fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let (x0, x1, y0, y1) = self.bounds;
        let (a, b) = (self.px(x0, y0), self.px(x1, y0));
        self.line_px(a, b, "black");
        let t = self.px(x0, y1);
        self.line_px(a, t, "black");
        self.text_px(a.0, a.1 + 15.0, &sig(x0, 4));
        self.text_px(b.0 - 20.0, b.1 + 15.0, &sig(x1, 4));
        self.text_px(4.0, a.1, &sig(y0, 4));
        self.text_px(4.0, t.1 + 4.0, &sig(y1, 4));
        self.text_px((a.0 + b.0) / 2.0, a.1 + 28.0, xlabel);
        self.text_px(4.0, self.margin - 20.0, ylabel);
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn bounds_of<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> (f64, f64, f64, f64) {
    pts.filter(|p| p.0.is_finite() && p.1.is_finite()).fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    )
}

fn pad(b: (f64, f64, f64, f64), m: f64) -> (f64, f64, f64, f64) {
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    (b.0 - m, b.1 + m, b.2 - m, b.3 + m)
}

/// True path, monitored path and route.
pub fn path_svg(trace: &Trace, route: &Route) -> String {
    let route_pts: Vec<(f64, f64)> = route.densify(0.1).iter().map(|w| (w.x, w.y)).collect();
    let truth: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.truth.pose.x, r.truth.pose.y)).collect();
    let est: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.monitored.x, r.monitored.y)).collect();
    let b = pad(bounds_of(route_pts.iter().chain(&truth)), 0.5);
    let mut svg = Svg::new(800.0, 600.0, b, true);
    svg.polyline(&route_pts, "#888888", 2.0, true);
    svg.polyline(&est, "#1f77b4", 1.0, false);
    svg.polyline(&truth, "#d62728", 1.5, false);
    svg.text_px(50.0, 20.0, "route (dashed), true path (red), monitored (blue)");
    svg.finish()
}

/// Candidate paths coloured by viability.
pub fn sweep_paths_svg(results: &[CandidateResult], route: &Route) -> String {
    let route_pts: Vec<(f64, f64)> = route.densify(0.1).iter().map(|w| (w.x, w.y)).collect();
    let b = pad(bounds_of(route_pts.iter().chain(results.iter().flat_map(|r| r.path.iter()))), 0.5);
    let mut svg = Svg::new(800.0, 600.0, b, true);
    for r in results.iter().filter(|r| !r.viable) {
        svg.polyline(&r.path, "#d62728", 0.7, false);
    }
    for r in results.iter().filter(|r| r.viable) {
        svg.polyline(&r.path, "#2ca02c", 0.7, false);
    }
    svg.polyline(&route_pts, "black", 1.5, true);
    svg.text_px(50.0, 20.0, "viable (green), non-viable (red), route (dashed)");
    svg.finish()
}

/// Max XTE against the first numeric axis, one line per combination of the
/// remaining axes, with the viability threshold.
pub fn boundary_svg(results: &[CandidateResult], x_axis: &str, threshold: Option<f64>) -> String {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in results {
        let Some(x) = r.value(x_axis).and_then(|v| v.as_number()) else { continue };
        let key: Vec<String> = r.assignment.iter().filter(|(n, _)| n != x_axis).map(|(n, v)| format!("{n}={v}")).collect();
        let key = key.join(" ");
        let y = if r.max_xte.is_finite() { r.max_xte } else { continue };
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((x, y)),
            None => series.push((key, vec![(x, y)])),
        }
    }
    let mut b = pad(bounds_of(series.iter().flat_map(|s| s.1.iter())), 0.01);
    if let Some(t) = threshold {
        b.3 = b.3.max(t * 1.1);
        b.2 = b.2.min(0.0);
    }
    let mut svg = Svg::new(800.0, 600.0, b, false);
    svg.axes(x_axis, "max XTE (m)");
    if let Some(t) = threshold {
        svg.polyline(&[(b.0, t), (b.1, t)], "black", 1.0, true);
    }
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];
    for (i, (_, pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let col = palette[i % palette.len()];
        svg.polyline(pts, col, 1.0, false);
        for &(x, y) in pts.iter() {
            let fill = if threshold.is_none_or(|t| y <= t) { col } else { "black" };
            svg.circle(x, y, 2.5, fill);
        }
    }
    svg.finish()
}

/// Box per configuration: median line, quartile box, min/max whiskers.
pub fn boxplot_svg(results: &[ConfigResult]) -> String {
    let hi = results.iter().map(|r| r.stats.whisker_hi).fold(1.0, f64::max);
    let n = results.len().max(1) as f64;
    let mut svg = Svg::new(900.0, 500.0, (0.0, n, 0.0, hi * 1.05), false);
    svg.axes("configuration", "d_t (m)");
    for (i, r) in results.iter().enumerate() {
        let s = &r.stats;
        let xc = i as f64 + 0.5;
        let (l, _) = svg.px(xc - 0.3, 0.0);
        let (rr, _) = svg.px(xc + 0.3, 0.0);
        let (cx, _) = svg.px(xc, 0.0);
        let (_, top) = svg.px(xc, s.q75);
        let (_, bot) = svg.px(xc, s.q25);
        let (_, med) = svg.px(xc, s.median);
        let (_, wl) = svg.px(xc, s.whisker_lo);
        let (_, wh) = svg.px(xc, s.whisker_hi);
        svg.line_px((cx, wl), (cx, bot), "black");
        svg.line_px((cx, top), (cx, wh), "black");
        svg.line_px((l + 8.0, wl), (rr - 8.0, wl), "black");
        svg.line_px((l + 8.0, wh), (rr - 8.0, wh), "black");
        svg.rect_px(l, top, rr - l, (bot - top).max(0.5), "#9ecae1");
        svg.line_px((l, med), (rr, med), "#d62728");
        svg.text_px(l, 490.0, &format!("{} {}", sig(r.config.compression, 3), r.config.method.name()));
    }
    svg.finish()
}
