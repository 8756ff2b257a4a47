//! Deterministic SVG rendering of fits, candidate shapes and simulation reports.

use std::fmt::Write as _;

use dosekit::drmodels::eval_standardized;
use dosekit::glsfit::CurvePoint;
use dosekit::simharness::SimReport;
use dosekit::{CandidateModel, DoseDesign};

use crate::CliError;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;

/// A first-stage estimate with its interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatePoint {
    pub dose: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tick label with as few decimals as the spacing needs.
fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Roughly `n` round ticks covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let span = (hi - lo).max(1e-12);
    let raw = span / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    ((first..=last).map(|i| i as f64 * step).collect(), step)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.1;
        (lo - pad, hi + pad)
    } else {
        let pad = 0.06 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Plot area mapping data coordinates to pixels.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    log_x: bool,
}

impl Frame {
    fn tx(&self, v: f64) -> f64 {
        if self.log_x {
            v.log10()
        } else {
            v
        }
    }

    fn px(&self, v: f64) -> f64 {
        let (lo, hi) = (self.tx(self.x.0), self.tx(self.x.1));
        self.left + (self.tx(v) - lo) / (hi - lo) * self.width
    }

    fn py(&self, v: f64) -> f64 {
        self.top + self.height - (v - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

struct Svg {
    buf: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}" font-family="sans-serif" font-size="11">"#,
            f(width),
            f(height)
        );
        let _ = writeln!(buf, r#"<rect width="100%" height="100%" fill="white"/>"#);
        Self { buf }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, extra: &str, s: &str) {
        let _ = writeln!(
            self.buf,
            r#"<text x="{}" y="{}" text-anchor="{anchor}"{extra}>{}</text>"#,
            f(x),
            f(y),
            escape(s)
        );
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), style: &str) {
        let _ = writeln!(
            self.buf,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" {style}/>"#,
            f(a.0),
            f(a.1),
            f(b.0),
            f(b.1)
        );
    }

    fn points(pts: &[(f64, f64)]) -> String {
        pts.iter()
            .map(|(x, y)| format!("{},{}", f(*x), f(*y)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn polyline(&mut self, class: &str, pts: &[(f64, f64)], style: &str) {
        let _ = writeln!(
            self.buf,
            r#"<polyline class="{class}" points="{}" fill="none" {style}/>"#,
            Self::points(pts)
        );
    }

    fn polygon(&mut self, class: &str, pts: &[(f64, f64)], style: &str) {
        let _ = writeln!(
            self.buf,
            r#"<polygon class="{class}" points="{}" {style}/>"#,
            Self::points(pts)
        );
    }

    fn circle(&mut self, class: &str, c: (f64, f64), r: f64, style: &str) {
        let _ = writeln!(
            self.buf,
            r#"<circle class="{class}" cx="{}" cy="{}" r="{}" {style}/>"#,
            f(c.0),
            f(c.1),
            f(r)
        );
    }

    fn axes(&mut self, fr: &Frame, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0) = (fr.left, fr.top + fr.height);
        let _ = writeln!(
            self.buf,
            r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            f(fr.left),
            f(fr.top),
            f(fr.width),
            f(fr.height)
        );
        let (xt, xstep) = if fr.log_x {
            let lo = fr.x.0.log10().floor() as i32;
            let hi = fr.x.1.log10().ceil() as i32;
            let ticks = (lo..=hi)
                .flat_map(|e| [1.0, 3.0].map(|m| m * 10f64.powi(e)))
                .filter(|&v| v >= fr.x.0 && v <= fr.x.1)
                .collect();
            (ticks, 1.0)
        } else {
            nice_ticks(fr.x.0, fr.x.1, 5)
        };
        for v in xt {
            let px = fr.px(v);
            self.line((px, y0), (px, y0 + 4.0), r##"stroke="#444""##);
            self.text(px, y0 + 15.0, "middle", "", &tick_label(v, xstep));
        }
        let (yt, ystep) = nice_ticks(fr.y.0, fr.y.1, 5);
        for v in yt {
            let py = fr.py(v);
            self.line((x0 - 4.0, py), (x0, py), r##"stroke="#444""##);
            self.line((x0, py), (x0 + fr.width, py), r##"stroke="#eee""##);
            self.text(x0 - 6.0, py + 4.0, "end", "", &tick_label(v, ystep));
        }
        self.text(fr.left + fr.width / 2.0, fr.top - 8.0, "middle", r#" font-weight="bold""#, title);
        self.text(fr.left + fr.width / 2.0, y0 + 32.0, "middle", "", xlabel);
        let (lx, ly) = (fr.left - 42.0, fr.top + fr.height / 2.0);
        let rot = format!(r#" transform="rotate(-90 {} {})""#, f(lx), f(ly));
        self.text(lx, ly, "middle", &rot, ylabel);
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

fn panel_frame(col: usize, row: usize, x: (f64, f64), y: (f64, f64), log_x: bool) -> Frame {
    Frame {
        x,
        y,
        left: col as f64 * PANEL_W + 60.0,
        top: row as f64 * PANEL_H + 30.0,
        width: PANEL_W - 80.0,
        height: PANEL_H - 75.0,
        log_x,
    }
}

/// Fitted curve with its pointwise band over first-stage estimates and their intervals.
pub fn fit_plot(curve: &[CurvePoint], estimates: &[EstimatePoint], title: &str) -> Result<String, CliError> {
    if curve.len() < 2 {
        return Err(CliError::Plot("fit plot needs at least two curve points".into()));
    }
    let finite = |v: f64| v.is_finite();
    let band = curve.iter().all(|p| finite(p.lower) && finite(p.upper));
    let mut ys: Vec<f64> = curve.iter().map(|p| p.fit).collect();
    if band {
        ys.extend(curve.iter().flat_map(|p| [p.lower, p.upper]));
    }
    ys.extend(estimates.iter().flat_map(|e| [e.value, e.lower, e.upper]));
    ys.retain(|v| v.is_finite());
    let xs = curve.iter().map(|p| p.dose).chain(estimates.iter().map(|e| e.dose));
    let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (ylo, yhi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let fr = Frame {
        x: padded(xlo, xhi),
        y: padded(ylo, yhi),
        left: 70.0,
        top: 40.0,
        width: 520.0,
        height: 330.0,
        log_x: false,
    };
    let mut svg = Svg::new(640.0, 430.0);
    svg.axes(&fr, title, "Dose", "Response");
    if band {
        let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (fr.px(p.dose), fr.py(p.upper))).collect();
        pts.extend(curve.iter().rev().map(|p| (fr.px(p.dose), fr.py(p.lower))));
        svg.polygon("band", &pts, r##"fill="#1f77b4" fill-opacity="0.2" stroke="none""##);
    }
    let line: Vec<(f64, f64)> = curve.iter().map(|p| (fr.px(p.dose), fr.py(p.fit))).collect();
    svg.polyline("curve", &line, r##"stroke="#1f77b4" stroke-width="2""##);
    for e in estimates {
        let x = fr.px(e.dose);
        svg.line((x, fr.py(e.lower)), (x, fr.py(e.upper)), r##"stroke="#222""##);
        svg.circle("estimate", (x, fr.py(e.value)), 3.5, r##"fill="#222""##);
    }
    Ok(svg.finish())
}

/// One panel per candidate, each shape scaled to rise from 0 at placebo to 1 at its maximum.
pub fn shapes_plot(models: &[CandidateModel], design: &DoseDesign) -> Result<String, CliError> {
    if models.is_empty() {
        return Err(CliError::Plot("no candidate models to plot".into()));
    }
    let xk = design.max_dose();
    let cols = models.len().min(3);
    let rows = models.len().div_ceil(cols);
    let mut svg = Svg::new(cols as f64 * PANEL_W, rows as f64 * PANEL_H);
    let grid: Vec<f64> = (0..=100).map(|i| xk * i as f64 / 100.0).collect();
    for (m, model) in models.iter().enumerate() {
        let shape = |x: f64| eval_standardized(model.family, &model.guesstimates, x);
        let base = shape(0.0);
        let peak = grid
            .iter()
            .chain(design.doses())
            .map(|&x| shape(x) - base)
            .fold(f64::NEG_INFINITY, f64::max);
        let scale = if peak.abs() > 1e-300 { peak } else { 1.0 };
        let norm = |x: f64| (shape(x) - base) / scale;
        let vals: Vec<f64> = grid.iter().map(|&x| norm(x)).collect();
        let lo = vals.iter().copied().fold(0.0, f64::min);
        let fr = panel_frame(m % cols, m / cols, (0.0, xk), padded(lo, 1.0), false);
        svg.axes(&fr, &model.label(), "Dose", "Model means");
        let pts: Vec<(f64, f64)> = grid.iter().zip(&vals).map(|(&x, &v)| (fr.px(x), fr.py(v))).collect();
        let colour = PALETTE[m % PALETTE.len()];
        svg.polyline("shape", &pts, &format!(r#"stroke="{colour}" stroke-width="2""#));
        for &d in design.doses() {
            svg.circle("dose", (fr.px(d), fr.py(norm(d))), 3.0, &format!(r#"fill="{colour}""#));
        }
    }
    Ok(svg.finish())
}

/// Coverage and RMSE against the per-arm sample size, one line per scenario.
pub fn report_plot(reports: &[SimReport]) -> Result<String, CliError> {
    if reports.is_empty() {
        return Err(CliError::Plot("simulation report is empty, nothing to plot".into()));
    }
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.scenario.name.as_str()) {
            names.push(&r.scenario.name);
        }
    }
    let series = |name: &str| {
        let mut v: Vec<&SimReport> = reports.iter().filter(|r| r.scenario.name == name).collect();
        v.sort_by_key(|r| r.scenario.n_per_arm);
        v
    };
    let ns: Vec<f64> = reports.iter().map(|r| r.scenario.n_per_arm as f64).collect();
    let nlo = ns.iter().copied().fold(f64::INFINITY, f64::min);
    let nhi = ns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xr = if nhi > nlo { (nlo / 1.2, nhi * 1.2) } else { (nlo / 2.0, nhi * 2.0) };
    let mut cov: Vec<f64> = vec![0.9];
    for r in reports {
        cov.push(r.gls.mean);
        cov.extend(r.gls_boot.iter().map(|b| b.mean));
    }
    let clo = cov.iter().copied().fold(f64::INFINITY, f64::min);
    let chi = cov.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rmse: Vec<f64> = reports.iter().map(|r| r.rmse_mean).filter(|v| v.is_finite()).collect();
    let rhi = rmse.iter().copied().fold(0.0, f64::max);

    let mut svg = Svg::new(2.0 * PANEL_W + 160.0, PANEL_H + 20.0);
    let cf = panel_frame(0, 0, xr, padded(clo.min(0.8), chi.max(1.0)), true);
    let rf = panel_frame(1, 0, xr, padded(0.0, rhi), true);
    let level = reports[0].level;
    svg.axes(&cf, &format!("Coverage of {:.0}% intervals", 100.0 * level), "n per arm", "Coverage");
    svg.axes(&rf, "RMSE of the fitted curve", "n per arm", "RMSE");
    svg.line(
        (cf.px(xr.0), cf.py(level)),
        (cf.px(xr.1), cf.py(level)),
        r##"stroke="#888" stroke-dasharray="4 3""##,
    );
    for (i, name) in names.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let s = series(name);
        let solid = format!(r#"stroke="{colour}" stroke-width="2""#);
        let gls: Vec<(f64, f64)> = s
            .iter()
            .map(|r| (cf.px(r.scenario.n_per_arm as f64), cf.py(r.gls.mean)))
            .collect();
        svg.polyline("coverage-gls", &gls, &solid);
        let boot: Vec<(f64, f64)> = s
            .iter()
            .filter_map(|r| r.gls_boot.as_ref().map(|b| (cf.px(r.scenario.n_per_arm as f64), cf.py(b.mean))))
            .collect();
        if !boot.is_empty() {
            svg.polyline(
                "coverage-boot",
                &boot,
                &format!(r#"stroke="{colour}" stroke-width="2" stroke-dasharray="6 3""#),
            );
        }
        let err: Vec<(f64, f64)> = s
            .iter()
            .filter(|r| r.rmse_mean.is_finite())
            .map(|r| (rf.px(r.scenario.n_per_arm as f64), rf.py(r.rmse_mean)))
            .collect();
        svg.polyline("rmse", &err, &solid);
        for p in gls.iter().chain(&boot) {
            svg.circle("point", *p, 2.5, &format!(r#"fill="{colour}""#));
        }
        for p in &err {
            svg.circle("point", *p, 2.5, &format!(r#"fill="{colour}""#));
        }
        let ly = 40.0 + 14.0 * i as f64;
        let lx = 2.0 * PANEL_W + 10.0;
        svg.line((lx, ly - 4.0), (lx + 18.0, ly - 4.0), &solid);
        svg.text(lx + 22.0, ly, "start", "", name);
    }
    let ly = 40.0 + 14.0 * names.len() as f64 + 10.0;
    let lx = 2.0 * PANEL_W + 10.0;
    svg.text(lx, ly, "start", "", "solid: GLS");
    svg.text(lx, ly + 14.0, "start", "", "dashed: GLS-B");
    Ok(svg.finish())
}
