//! Hand-emitted SVG plots with a fixed viewport. Output depends only on the
//! input values, so identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::harness::dolan_more::DolanMoreTable;
use crate::harness::run::{aggregate, Aggregate, ErrorMetric};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One row of `curves.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub strategy: String,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub maxerr: f64,
}

impl CurveRow {
    fn value(&self, metric: ErrorMetric) -> f64 {
        match metric {
            ErrorMetric::Rmse => self.rmse,
            ErrorMetric::Mae => self.mae,
            ErrorMetric::MaxErr => self.maxerr,
        }
    }
}

pub fn parse_curves(text: &str) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::usage(format!("curves file lacks a '{name}' column")))
    };
    let idx = [
        col("iteration")?,
        col("strategy")?,
        col("seed")?,
        col("rmse")?,
        col("mae")?,
        col("maxerr")?,
    ];
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::usage(format!("curves row {}: bad {what}", line + 2));
        let num = |i: usize, what: &str| -> Result<f64> {
            rec.get(idx[i])
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(what))
        };
        rows.push(CurveRow {
            iteration: rec.get(idx[0]).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("iteration"))?,
            strategy: rec.get(idx[1]).unwrap_or("").to_string(),
            seed: rec.get(idx[2]).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("seed"))?,
            rmse: num(3, "rmse")?,
            mae: num(4, "mae")?,
            maxerr: num(5, "maxerr")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::usage("curves file has no rows"));
    }
    Ok(rows)
}

/// Per strategy, the aggregate over seeds of `metric` at each iteration.
pub fn aggregate_curves(
    rows: &[CurveRow],
    metric: ErrorMetric,
    how: Aggregate,
) -> BTreeMap<String, Vec<(usize, f64)>> {
    let mut groups: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(r.strategy.clone())
            .or_default()
            .entry(r.iteration)
            .or_default()
            .push(r.value(metric));
    }
    groups
        .into_iter()
        .map(|(s, its)| {
            let pts = its.into_iter().map(|(i, mut v)| (i, aggregate(&mut v, how))).collect();
            (s, pts)
        })
        .collect()
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Frame {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bx, by) = (f.px(f.x0), f.py(f.y0));
    let (ex, ey) = (f.px(f.x1), f.py(f.y1));
    let _ = writeln!(
        out,
        r#"<path d="M{bx:.2} {ey:.2} L{bx:.2} {by:.2} L{ex:.2} {by:.2}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            by + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (bx + ex) / 2.0,
        HEIGHT - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (by + ey) / 2.0,
        (by + ey) / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, i: usize, name: &str) {
    let y = TOP + 10.0 + 18.0 * i as f64;
    let x = WIDTH - RIGHT + 12.0;
    let c = PALETTE[i % PALETTE.len()];
    let _ = writeln!(
        out,
        r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{c}" stroke-width="2"/>"#,
        x + 20.0
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Learning curves: one polyline per strategy, iteration on x.
pub fn learning_curves_svg(rows: &[CurveRow], metric: ErrorMetric, how: Aggregate) -> String {
    let curves = aggregate_curves(rows, metric, how);
    let all = curves.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(i, v) in all {
        x0 = x0.min(i as f64);
        x1 = x1.max(i as f64);
        y0 = y0.min(v);
        y1 = y1.max(v);
    }
    let f = Frame::new(x0, x1, y0.min(0.0), y1);
    let mut out = String::new();
    let agg = match how {
        Aggregate::Mean => "mean",
        _ => "median",
    };
    header(&mut out, &format!("{agg} test {} over seeds", metric.name()), "iteration", metric.name(), &f);
    for (k, (name, pts)) in curves.iter().enumerate() {
        let d: Vec<String> = pts
            .iter()
            .map(|&(i, v)| format!("{:.2},{:.2}", f.px(i as f64), f.py(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            d.join(" "),
            PALETTE[k % PALETTE.len()]
        );
        legend(&mut out, k, name);
    }
    out.push_str("</svg>\n");
    out
}

/// Right-continuous step plot of each ρ_a(τ).
pub fn profile_svg(table: &DolanMoreTable, names: &[String]) -> String {
    let tau_max = table.tau.last().copied().unwrap_or(1.0).max(1.0);
    let tau_hi = if tau_max > 1.0 { tau_max * 1.05 } else { 2.0 };
    let f = Frame::new(1.0, tau_hi, 0.0, 1.0);
    let mut out = String::new();
    header(&mut out, "performance profile", "tau", "fraction of problems", &f);
    for (a, name) in names.iter().enumerate() {
        let mut d = String::new();
        let mut prev: Option<f64> = None;
        for (t, &tau) in table.tau.iter().enumerate() {
            let rho = table.rho[(t, a)];
            match prev {
                None => {
                    let _ = write!(d, "M{:.2} {:.2}", f.px(tau), f.py(rho));
                }
                Some(p) => {
                    let _ = write!(d, " L{:.2} {:.2} L{:.2} {:.2}", f.px(tau), f.py(p), f.px(tau), f.py(rho));
                }
            }
            prev = Some(rho);
        }
        if let Some(p) = prev {
            let _ = write!(d, " L{:.2} {:.2}", f.px(tau_hi), f.py(p));
        }
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="2"/>"#,
            PALETTE[a % PALETTE.len()]
        );
        legend(&mut out, a, name);
    }
    out.push_str("</svg>\n");
    out
}
